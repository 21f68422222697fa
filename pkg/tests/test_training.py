import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dccamon.errors import ArtifactError, ConfigError, DivergenceError, InsufficientDataError, ShapeError
from dccamon.training import (
    DataWindow,
    Standardizer,
    TrainConfig,
    WindowSet,
    init_pair,
    load_pair,
    loss_and_grads,
    make_windows,
    save_pair,
    train,
    window_scores,
)


def coupled_pools(rng, n_samples=300, d1=5, d2=7, shift=0.0):
    z = rng.standard_normal((3, n_samples))
    X = rng.standard_normal((d1, 3)) @ z + 0.3 * rng.standard_normal((d1, n_samples))
    Y = rng.standard_normal((d2, 3)) @ z + 0.3 * rng.standard_normal((d2, n_samples)) + shift
    return X, Y


def small_config(**kw):
    base = dict(window_size=10, dim=2, epochs=5, lr=1e-3, signal_hidden=(6,), quality_hidden=(6,),
                n_normal_windows=8)
    base.update(kw)
    return TrainConfig(**base)


class TestWindows:
    def test_disjoint_partition(self, rng):
        X, Y = rng.standard_normal((2, 100)), rng.standard_normal((3, 100))
        ws = make_windows(X, Y, 25, 4, seed=0, mode="disjoint")
        assert len(ws) == 4
        assert sorted(ws.x_index.ravel().tolist()) == list(range(100))

    def test_bootstrap_default_setting(self, rng):
        X, Y = rng.standard_normal((2, 4000)), rng.standard_normal((3, 4000))
        ws = make_windows(X, Y, 25, 1000, seed=1)
        assert ws.x_index.shape == (1000, 25)
        assert all(len(set(row)) == 25 for row in ws.x_index.tolist())

    def test_full_window(self, rng):
        X, Y = rng.standard_normal((2, 30)), rng.standard_normal((3, 30))
        w = make_windows(X, Y, 30, 1, seed=2)[0]
        order = np.argsort(w.X[0])
        np.testing.assert_array_equal(w.X[:, order], X[:, np.argsort(X[0])])

    def test_pairing_preserved(self, rng):
        X = np.arange(50.0)[None, :]
        Y = 10 * np.arange(50.0)[None, :]
        for w in make_windows(X, Y, 7, 20, seed=3):
            np.testing.assert_array_equal(w.Y, 10 * w.X)

    def test_errors(self, rng):
        X, Y = rng.standard_normal((2, 20)), rng.standard_normal((3, 20))
        with pytest.raises(InsufficientDataError):
            make_windows(X, Y, 10, 3, mode="disjoint")
        with pytest.raises(InsufficientDataError):
            make_windows(X, Y, 21, 1)
        with pytest.raises(ShapeError):
            make_windows(X, Y[:, :10], 5, 1)
        with pytest.raises(ValueError):
            make_windows(X, Y, 5, 1, mode="sliding")

    def test_list_conversion(self, rng):
        X, Y = rng.standard_normal((2, 40)), rng.standard_normal((3, 40))
        ws = make_windows(X, Y, 8, 3, seed=4)
        back = WindowSet.from_windows(list(ws))
        for a, b in zip(ws, back):
            np.testing.assert_array_equal(a.X, b.X)
            np.testing.assert_array_equal(a.Y, b.Y)

    def test_datawindow_shape(self, rng):
        with pytest.raises(ShapeError):
            DataWindow(np.zeros((2, 5)), np.zeros((2, 4)))


class TestConfig:
    def test_beta_range(self):
        with pytest.raises(ConfigError):
            TrainConfig(beta=1.5).validate()

    def test_window_exceeds_dim(self):
        with pytest.raises(ConfigError):
            TrainConfig(window_size=6, dim=6).validate()

    def test_roundtrip(self):
        cfg = TrainConfig(signal_hidden=(8,), quality_hidden=(16, 4))
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.digest() == TrainConfig.from_dict(cfg.to_dict()).digest()


def fd_loss_check(pair, normal, abnormal, beta, rng, entries=20, step=1e-5):
    loss, grads = loss_and_grads(pair, normal, abnormal, beta)
    params = pair.params()
    worst = 0.0
    for _ in range(entries):
        k = rng.integers(len(params))
        idx = tuple(rng.integers(s) for s in params[k].shape)
        keep = params[k][idx]
        params[k][idx] = keep + step
        up = loss_and_grads(pair, normal, abnormal, beta)[0]
        params[k][idx] = keep - step
        down = loss_and_grads(pair, normal, abnormal, beta)[0]
        params[k][idx] = keep
        fd = (up - down) / (2 * step)
        worst = max(worst, abs(fd - grads[k][idx]) / max(abs(fd), abs(grads[k][idx]), 1e-6))
    return worst


class TestLoss:
    def setup_pools(self, rng):
        X, Y = coupled_pools(rng)
        cfg = small_config(beta=0.5)
        pair = init_pair(cfg, X.shape[0], Y.shape[0], Standardizer.fit(X), Standardizer.fit(Y))
        normal = make_windows(X, Y, 10, 6, seed=0)
        Xa, Ya = coupled_pools(rng, shift=1.0)
        abnormal = make_windows(Xa, Ya, 10, 4, seed=1, label="abnormal")
        return pair, normal, abnormal

    def test_finite_differences(self, rng):
        pair, normal, abnormal = self.setup_pools(rng)
        assert fd_loss_check(pair, normal, None, 0.0, rng) < 1e-4
        assert fd_loss_check(pair, normal, abnormal, 0.5, rng) < 1e-4

    def test_beta_zero_ignores_abnormal(self, rng):
        pair, normal, abnormal = self.setup_pools(rng)
        l0, g0 = loss_and_grads(pair, normal)
        l1, g1 = loss_and_grads(pair, normal, abnormal, beta=0.0)
        assert l0 == l1
        assert all(np.array_equal(a, b) for a, b in zip(g0, g1))

    def test_loss_definition(self, rng):
        pair, normal, abnormal = self.setup_pools(rng)
        loss, _ = loss_and_grads(pair, normal, abnormal, beta=0.5)
        expected = -window_scores(pair, normal).mean() + 0.5 * window_scores(pair, abnormal).mean()
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_lower_bound(self, rng):
        pair, normal, _ = self.setup_pools(rng)
        assert loss_and_grads(pair, normal)[0] >= -pair.p

    def test_window_order_invariance(self, rng):
        pair, normal, _ = self.setup_pools(rng)
        perm = rng.permutation(len(normal))
        a = loss_and_grads(pair, normal)[0]
        b = loss_and_grads(pair, normal.take(perm))[0]
        assert a == pytest.approx(b, abs=1e-10)

    def test_list_and_set_agree(self, rng):
        pair, normal, _ = self.setup_pools(rng)
        a = loss_and_grads(pair, normal)[0]
        b = loss_and_grads(pair, list(normal))[0]
        assert a == pytest.approx(b, abs=1e-12)

    def test_beta_without_abnormal(self, rng):
        pair, normal, _ = self.setup_pools(rng)
        with pytest.raises(InsufficientDataError):
            loss_and_grads(pair, normal, None, beta=0.3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    def test_finite_difference_property(self, seed, beta):
        rng = np.random.default_rng(seed)
        pair, normal, abnormal = self.setup_pools(rng)
        assert fd_loss_check(pair, normal, abnormal, beta, rng, entries=4) < 1e-4


class TestTrain:
    def test_zero_epochs(self, rng):
        X, Y = coupled_pools(rng)
        cfg = small_config(epochs=0)
        windows = make_windows(X, Y, 10, 8, seed=0)
        start = init_pair(cfg, X.shape[0], Y.shape[0])
        res = train(cfg, windows)
        assert res.history == []
        assert all(np.array_equal(a, b) for a, b in zip(start.params(), res.pair.params()))

    def test_deterministic(self, rng):
        X, Y = coupled_pools(rng)
        cfg = small_config(epochs=8)
        windows = make_windows(X, Y, 10, 8, seed=0)
        assert train(cfg, windows).history == train(cfg, windows).history

    def test_identical_views_approach_minus_p(self, rng):
        X = rng.standard_normal((3, 400))
        cfg = small_config(dim=3, window_size=20, epochs=150, lr=1e-2, signal_hidden=(), quality_hidden=())
        res = train(cfg, make_windows(X, X.copy(), 20, 40, seed=0))
        assert res.history[-1] < res.history[0]
        assert res.history[-1] < -0.99 * 3
        assert min(res.history) >= -3 - 1e-9

    def test_loss_trends_down(self, rng):
        X, Y = coupled_pools(rng)
        cfg = small_config(epochs=60, lr=1e-2)
        hist = train(cfg, make_windows(X, Y, 10, 20, seed=0), x_scaler=Standardizer.fit(X),
                     y_scaler=Standardizer.fit(Y)).history
        assert np.mean(hist[-10:]) < np.mean(hist[:10])

    def test_beta_separates_classes(self, rng):
        X, Y = coupled_pools(rng, n_samples=400)
        Xa = rng.standard_normal(X.shape) * X.std(axis=1, keepdims=True) + X.mean(axis=1, keepdims=True)
        cfg = small_config(epochs=80, lr=1e-2, beta=1.0, n_abnormal_windows=20)
        normal = make_windows(X, Y, 10, 20, seed=0)
        abnormal = make_windows(Xa, Y, 10, 20, seed=1, label="abnormal")
        res = train(cfg, normal, abnormal, x_scaler=Standardizer.fit(X), y_scaler=Standardizer.fit(Y))
        test_normal = make_windows(X, Y, 10, 50, seed=5)
        test_abnormal = make_windows(Xa, Y, 10, 50, seed=6)
        assert window_scores(res.pair, test_normal).mean() > window_scores(res.pair, test_abnormal).mean()

    def test_divergence_carries_epoch(self, rng):
        X = np.ones((3, 100))
        cfg = small_config()
        with pytest.raises(DivergenceError) as info:
            train(cfg, make_windows(X, rng.standard_normal((4, 100)), 10, 4, seed=0))
        assert info.value.epoch == 0

    def test_window_size_must_match(self, rng):
        X, Y = coupled_pools(rng)
        with pytest.raises(ShapeError):
            train(small_config(), make_windows(X, Y, 12, 4, seed=0))

    def test_beta_requires_abnormal(self, rng):
        X, Y = coupled_pools(rng)
        with pytest.raises(InsufficientDataError):
            train(small_config(beta=0.2), make_windows(X, Y, 10, 4, seed=0))

    def test_minibatch_option(self, rng):
        X, Y = coupled_pools(rng)
        res = train(small_config(epochs=3, batch_windows=3), make_windows(X, Y, 10, 8, seed=0))
        assert len(res.history) == 3 and np.all(np.isfinite(res.history))


class TestCheckpoint:
    def test_roundtrip(self, rng, tmp_path):
        X, Y = coupled_pools(rng)
        cfg = small_config(epochs=3, signal_hidden=(4,))
        res = train(cfg, make_windows(X, Y, 10, 8, seed=0), x_scaler=Standardizer.fit(X),
                    y_scaler=Standardizer.fit(Y, per_coordinate=False))
        save_pair(res.pair, tmp_path / "ck", res.history, {"dataset_hash": "abc"})
        pair, manifest = load_pair(tmp_path / "ck")
        assert manifest["dataset_hash"] == "abc"
        np.testing.assert_array_equal(pair.encode_x(X), res.pair.encode_x(X))
        np.testing.assert_array_equal(pair.encode_y(Y), res.pair.encode_y(Y))
        assert pair.config == res.pair.config
        assert (tmp_path / "ck" / "config.ini").read_text().startswith("[train]")

    def test_tampered_checkpoint(self, rng, tmp_path):
        X, Y = coupled_pools(rng)
        pair = init_pair(small_config(), X.shape[0], Y.shape[0])
        save_pair(pair, tmp_path / "ck")
        ini = tmp_path / "ck" / "config.ini"
        ini.write_text(ini.read_text().replace("epochs = 5", "epochs = 6"))
        with pytest.raises(ArtifactError):
            load_pair(tmp_path / "ck")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ArtifactError):
            load_pair(tmp_path)
