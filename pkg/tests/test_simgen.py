from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from dccamon.errors import ArtifactError, ConfigError
from dccamon.nn import train_autoencoder
from dccamon.simgen import (
    DEFAULT_BETAS,
    SimConfig,
    draw_line,
    gen_dataset,
    gen_images,
    gen_latents_and_signals,
    gen_quality_image,
    load_dataset,
    log_magnitude,
    sample_rng,
    save_dataset,
    with_noise,
)

from conftest import SMALL


class TestImages:
    @pytest.mark.parametrize("r", [4.0, 5.0, 6.0, 9.0])
    def test_disc_area(self, r):
        cfg = SimConfig(max_shapes=1, radius_lb=r - 1e-9, radius_ub=r, image_size=32)
        for i in range(10):
            lit = gen_quality_image(0, cfg, sample_rng(0, i, 99)).sum()
            assert abs(lit - np.pi * r * r) <= 0.1 * np.pi * r * r

    def test_single_disc_is_one_component(self):
        cfg = SimConfig(max_shapes=1)
        for i in range(20):
            _, count = ndimage.label(gen_quality_image(0, cfg, sample_rng(1, i, 99)))
            assert count == 1

    def test_pixels_binary_and_in_frame(self):
        cfg = SimConfig()
        for label in (0, 1):
            for i in range(100):
                img = gen_quality_image(label, cfg, sample_rng(2, i, 99))
                assert img.shape == (32, 32) and set(np.unique(img)) <= {0, 1} and img.sum() > 0

    def test_disc_clear_of_border(self):
        cfg = SimConfig(max_shapes=1)
        for i in range(50):
            img = gen_quality_image(0, cfg, sample_rng(3, i, 99))
            rows, cols = np.nonzero(img)
            assert rows.min() >= 0 and cols.min() >= 0 and rows.max() < 32 and cols.max() < 32

    def test_crack_thickness(self):
        cfg = SimConfig(max_shapes=1, max_thickness=2)
        for i in range(200):
            img = gen_quality_image(1, cfg, sample_rng(4, i, 99))
            # a stroke at most two pixels thick cannot contain a 3x3 block
            assert not ndimage.binary_erosion(img, np.ones((3, 3))).any()

    def test_crack_stroke_count(self):
        cfg = SimConfig(max_shapes=3)
        for i in range(200):
            _, count = ndimage.label(gen_quality_image(1, cfg, sample_rng(5, i, 99)), np.ones((3, 3)))
            assert 1 <= count <= 3

    def test_draw_line_thickness_along_minor_axis(self):
        img = np.zeros((10, 10), dtype=np.uint8)
        draw_line(img, (1, 4), (8, 4), 2)
        assert img.sum() == 16 and img[3:5, 1:9].all()
        steep = np.zeros((10, 10), dtype=np.uint8)
        draw_line(steep, (4, 0), (4, 9), 1)
        assert steep[:, 4].all() and steep.sum() == 10


class TestSignals:
    def test_log_magnitude(self):
        x = np.array([0.0, 1.0, np.e, -np.e**2])
        np.testing.assert_allclose(log_magnitude(x), [np.log(1e-6), 0.0, 1.0, 2.0])
        # logit of the squash x / (1 + x) is log x
        y = np.array([0.3, 2.0, 40.0])
        s = y / (1 + y)
        np.testing.assert_allclose(log_magnitude(y), np.log(s / (1 - s)))

    def test_deterministic_in_u(self):
        cfg = SimConfig(n_samples=40, test_size=10, delta=0.0, betas=(1.0,) * 6, sigmas=(0.0,) * 6)
        labels, images = gen_images(cfg, range(20))
        images = np.concatenate([images, images[:5]])
        flat = images.reshape(len(images), -1).T.astype(float)
        ae, _ = train_autoencoder(flat, 6, epochs=3, seed=0, hidden=(16,))
        _, v, sig, clean = gen_latents_and_signals(images, cfg, ae, np.arange(len(images)))
        np.testing.assert_array_equal(sig, clean)
        # batched products may reassociate sums by column position
        np.testing.assert_allclose(sig[:, :5], sig[:, 20:], rtol=0, atol=1e-12)

    def test_shapes_small(self, small_dataset):
        ds = small_dataset
        assert ds.signals.shape == (16, 600) and ds.images.shape == (600, 32, 32)
        assert ds.u.shape == ds.v.shape == (6, 600)
        assert ds.images.dtype == np.uint8 and set(np.unique(ds.images)) <= {0, 1}

    def test_splits(self, small_dataset):
        s = small_dataset.splits
        assert len(s["test"]) == 200 and len(s["val"]) == 80 and len(s["train"]) == 320
        assert len(np.unique(np.concatenate(list(s.values())))) == 600

    def test_byte_reproducible(self, small_dataset):
        again = gen_dataset(SMALL)
        assert again.signals.tobytes() == small_dataset.signals.tobytes()
        assert again.images.tobytes() == small_dataset.images.tobytes()

    def test_noise_levels_share_draws(self, small_dataset):
        a, b = with_noise(small_dataset, 0.5), with_noise(small_dataset, 2.0)
        np.testing.assert_allclose(4 * (a.signals - a.clean_signals), b.signals - b.clean_signals, atol=1e-12)
        np.testing.assert_array_equal(a.images, b.images)


class TestOrderIndependence:
    @settings(max_examples=20, deadline=None)
    @given(st.permutations(list(range(12))))
    def test_labels_and_images_commute(self, perm):
        cfg = SimConfig()
        labels, images = gen_images(cfg, range(12))
        pl, pi = gen_images(cfg, perm)
        np.testing.assert_array_equal(pl, labels[perm])
        np.testing.assert_array_equal(pi, images[perm])


class TestConfig:
    @pytest.mark.parametrize("theta", [0.0, 1.0, -0.2])
    def test_theta_range(self, theta):
        with pytest.raises(ConfigError):
            gen_dataset(SimConfig(theta=theta))

    def test_other_invariants(self):
        for bad in [dict(radius_lb=6.0, radius_ub=2.0), dict(radius_ub=17.0), dict(betas=(1.0,)),
                    dict(delta=-1.0), dict(test_size=10000), dict(val_fraction=0.0)]:
            with pytest.raises(ConfigError):
                replace(SimConfig(), **bad).validate()

    def test_dict_roundtrip(self):
        cfg = SimConfig(betas=(1, 2, 3, 4, 5, 6), seed=4)
        assert SimConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.digest() != SimConfig().digest()


class TestPersistence:
    def test_roundtrip(self, small_dataset, tmp_path):
        save_dataset(small_dataset, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.signals.tobytes() == small_dataset.signals.tobytes()
        np.testing.assert_array_equal(back.labels, small_dataset.labels)
        for k in ("train", "val", "test"):
            np.testing.assert_array_equal(back.splits[k], small_dataset.splits[k])
        assert back.config == small_dataset.config

    def test_missing_manifest(self, tmp_path):
        with pytest.raises((ArtifactError, FileNotFoundError)):
            load_dataset(tmp_path)


@pytest.mark.slow
class TestDefaultSimulation:
    def test_shapes(self, full_dataset):
        assert full_dataset.signals.shape == (16, 10000) and full_dataset.images.shape == (10000, 32, 32)
        assert tuple(full_dataset.config.betas) == DEFAULT_BETAS

    def test_label_fraction(self, full_dataset):
        n1 = int(full_dataset.labels.sum())
        assert 4800 <= n1 <= 5200
        assert abs(n1 / 10000 - 0.5) <= 3 * np.sqrt(0.25 / 10000)

    def test_coupling_correlation(self, full_dataset):
        ds, cfg = full_dataset, full_dataset.config
        for i in range(cfg.latent_dim):
            u, v = ds.u[i], ds.v[i]
            expected = cfg.betas[i] * u.std() / np.sqrt(cfg.betas[i] ** 2 * u.var() + cfg.sigmas[i] ** 2)
            assert abs(np.corrcoef(u, v)[0, 1] - expected) <= 0.05

    @pytest.mark.parametrize("delta", [0.0, 1.0, 2.0])
    def test_signal_envelope(self, full_dataset, delta):
        q99 = np.percentile(with_noise(full_dataset, delta).signals, 99)
        assert 0.0 <= q99 <= 25.0
