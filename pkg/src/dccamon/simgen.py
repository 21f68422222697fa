"""Synthetic process/quality data.

Generation runs backwards from the quality label: labels pick a defect family,
binary images are rasterised (pinholes for conforming parts, cracks for
defects), an autoencoder compresses the images to latent features ``u``, the
process-side latents are ``v = beta * u + sigma * noise`` and the process
signal is ``log|M2 relu(M1 v)| + delta * noise``.

Every per-sample random draw comes from its own stream keyed by
``(seed, sample index, purpose)``, so samples can be generated in any order.
"""
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fileio
from .errors import ArtifactError, ConfigError
from .nn import train_autoencoder

DEFAULT_BETAS = (0.3, 1.0, 2.0, 0.4, -0.5, -0.7)

# purposes for the per-sample streams
_LABEL, _IMAGE, _COUPLING, _SIGNAL = range(4)
_MIXING, _SPLIT, _AUTOENCODER = 101, 102, 103

LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class SimConfig:
    n_samples: int = 10000
    theta: float = 0.5
    image_size: int = 32
    max_shapes: int = 3
    radius_lb: float = 2.0
    radius_ub: float = 6.0
    max_thickness: int = 2
    latent_dim: int = 6
    width_h1: int = 32
    width_h2: int = 16
    betas: tuple = DEFAULT_BETAS
    sigmas: tuple = (0.1,) * 6
    delta: float = 1.0
    seed: int = 0
    ae_epochs: int = 200
    ae_hidden: tuple = (128,)
    ae_lr: float = 1e-3
    test_size: int = 5000
    val_fraction: float = 0.2

    def validate(self):
        if not 0 < self.theta < 1:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0 < self.radius_lb < self.radius_ub < self.image_size / 2:
            raise ConfigError("need 0 < radius_lb < radius_ub < image_size / 2")
        if len(self.betas) != self.latent_dim or len(self.sigmas) != self.latent_dim:
            raise ConfigError("betas and sigmas must have latent_dim entries")
        if min(self.sigmas) < 0 or self.delta < 0:
            raise ConfigError("noise levels must be nonnegative")
        if self.max_shapes < 1 or self.max_thickness < 1:
            raise ConfigError("max_shapes and max_thickness must be at least 1")
        if self.n_samples < 2 or not 0 <= self.test_size < self.n_samples:
            raise ConfigError("test_size must be smaller than n_samples")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        return self

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["sigmas"] = list(self.sigmas)
        d["ae_hidden"] = list(self.ae_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("betas", "sigmas", "ae_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def digest(self):
        return fileio.config_hash(self.to_dict())


def sample_rng(seed, index, purpose):
    return np.random.default_rng([int(seed), int(index), int(purpose)])


# ------------------------------------------------------------------ images


def _disc(image, cx, cy, r):
    d0 = image.shape[0]
    centers = np.arange(d0) + 0.5
    mask = (centers[None, :] - cx) ** 2 + (centers[:, None] - cy) ** 2 <= r * r
    image[mask] = 1


def _bresenham(x0, y0, x1, y1):
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_line(image, start, end, thickness):
    """Integer line with ``thickness`` pixels measured along the minor axis."""
    d0 = image.shape[0]
    x0, y0 = (min(int(c), d0 - 1) for c in start)
    x1, y1 = (min(int(c), d0 - 1) for c in end)
    steep = abs(y1 - y0) > abs(x1 - x0)
    offsets = range(-(thickness // 2), thickness - thickness // 2)
    for x, y in _bresenham(x0, y0, x1, y1):
        for k in offsets:
            px, py = (x + k, y) if steep else (x, y + k)
            if 0 <= px < d0 and 0 <= py < d0:
                image[py, px] = 1


def gen_quality_image(label, config, rng):
    """Binary ``d0 x d0`` image: pinholes for label 0, cracks for label 1."""
    d0 = config.image_size
    image = np.zeros((d0, d0), dtype=np.uint8)
    m = int(rng.integers(1, config.max_shapes + 1))
    if label == 0:
        for _ in range(m):
            r = rng.uniform(config.radius_lb, config.radius_ub)
            cx, cy = rng.uniform(r, d0 - r, size=2)
            _disc(image, cx, cy, r)
    else:
        for _ in range(m):
            start = rng.uniform(0, d0, size=2)
            end = rng.uniform(0, d0, size=2)
            thickness = int(rng.integers(1, config.max_thickness + 1))
            draw_line(image, start, end, thickness)
    return image


# ------------------------------------------------------------------ signals


def log_magnitude(x):
    """``logit(x / (1 + x))`` for ``x >= 0``, which simplifies to ``log x``.

    The squash maps the unbounded magnitude into (0, 1) so the logit is defined;
    ``x`` is floored at ``LOG_FLOOR`` to keep exact zeros finite.
    """
    return np.log(np.maximum(np.abs(x), LOG_FLOOR))


def mixing_matrices(config):
    rng = np.random.default_rng([config.seed, _MIXING])
    m1 = rng.normal(1.0, 1.0, size=(config.width_h1, config.latent_dim))
    m2 = rng.normal(0.0, 1.0, size=(config.width_h2, config.width_h1))
    return m1, m2


def signal_map(v, m1, m2):
    """Noise-free process signal for latent columns ``v`` (h x N)."""
    return log_magnitude(m2 @ np.maximum(m1 @ v, 0.0))


def gen_latents_and_signals(images, config, autoencoder, indices=None):
    """Couple image features to process latents and render process signals.

    Parameters
    ----------
    images : ndarray, shape (N, d0, d0)
    autoencoder : Autoencoder
        Trained on images with bottleneck ``latent_dim``.
    indices : sequence of int, optional
        Global sample indices keying the per-sample noise streams (default
        ``0..N-1``).

    Returns
    -------
    u, v, signals, clean_signals : ndarrays (h x N, h x N, h2 x N, h2 x N)
        ``u`` is standardised per coordinate before coupling.
    """
    if autoencoder.bottleneck != config.latent_dim:
        raise ConfigError("autoencoder bottleneck must equal latent_dim")
    n = images.shape[0]
    indices = np.arange(n) if indices is None else np.asarray(indices)
    flat = images.reshape(n, -1).T.astype(np.float64)
    raw = autoencoder.encode(flat)
    mu = raw.mean(axis=1, keepdims=True)
    sd = raw.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    u = (raw - mu) / sd
    betas = np.asarray(config.betas)[:, None]
    sigmas = np.asarray(config.sigmas)[:, None]
    eps = np.stack([sample_rng(config.seed, i, _COUPLING).standard_normal(config.latent_dim) for i in indices], 1)
    v = betas * u + sigmas * eps
    m1, m2 = mixing_matrices(config)
    clean = signal_map(v, m1, m2)
    noise = signal_noise(config, indices)
    return u, v, clean + config.delta * noise, clean


def signal_noise(config, indices):
    return np.stack([sample_rng(config.seed, i, _SIGNAL).standard_normal(config.width_h2) for i in indices], 1)


# ------------------------------------------------------------------ datasets


@dataclass
class SimDataset:
    signals: np.ndarray  # (h2, N)
    images: np.ndarray  # (N, d0, d0) uint8
    labels: np.ndarray  # (N,) int
    u: np.ndarray
    v: np.ndarray
    clean_signals: np.ndarray
    config: SimConfig
    splits: dict = field(default_factory=dict)
    autoencoder: object = field(default=None, repr=False)

    @property
    def flat_images(self):
        """Images as a ``(d0*d0, N)`` float block (column per sample)."""
        n = self.images.shape[0]
        return self.images.reshape(n, -1).T.astype(np.float64)

    def subset(self, split, label=None):
        """Column indices of ``split`` ('train', 'val', 'test'), optionally one label."""
        idx = self.splits[split]
        if label is not None:
            idx = idx[self.labels[idx] == label]
        return idx


def make_splits(config):
    rng = np.random.default_rng([config.seed, _SPLIT])
    perm = rng.permutation(config.n_samples)
    test = np.sort(perm[: config.test_size])
    rest = perm[config.test_size:]
    n_val = int(round(config.val_fraction * rest.size))
    return {"train": np.sort(rest[n_val:]), "val": np.sort(rest[:n_val]), "test": test}


def gen_images(config, indices):
    labels = np.array([int(sample_rng(config.seed, i, _LABEL).random() < config.theta) for i in indices])
    images = np.stack([gen_quality_image(q, config, sample_rng(config.seed, i, _IMAGE)) for i, q in zip(indices, labels)])
    return labels, images


def gen_dataset(config):
    """Run the full generation pipeline for ``config``."""
    config.validate()
    idx = np.arange(config.n_samples)
    labels, images = gen_images(config, idx)
    flat = images.reshape(config.n_samples, -1).T.astype(np.float64)
    ae, _ = train_autoencoder(
        flat,
        config.latent_dim,
        epochs=config.ae_epochs,
        lr=config.ae_lr,
        seed=int(np.random.default_rng([config.seed, _AUTOENCODER]).integers(2**31)),
        hidden=config.ae_hidden,
    )
    u, v, signals, clean = gen_latents_and_signals(images, config, ae, idx)
    return SimDataset(signals, images, labels, u, v, clean, config, make_splits(config), ae)


def with_noise(dataset, delta):
    """Same dataset with the process-signal noise level changed to ``delta``.

    Images, latents and the noise draws are shared, so datasets at different
    noise levels differ only in the noise scale.
    """
    config = replace(dataset.config, delta=float(delta)).validate()
    noise = signal_noise(config, np.arange(config.n_samples))
    return replace(dataset, signals=dataset.clean_signals + config.delta * noise, config=config)


# ------------------------------------------------------------------ persistence


def save_dataset(dataset, out_dir):
    """Write signals, bitmaps, labels, splits and a manifest under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").unlink(missing_ok=True)
    cfg = dataset.config
    digest = cfg.digest()
    fileio.write_tensor(
        out / "signals.f64",
        dataset.signals,
        kind="signals",
        dims=["channel", "sample"],
        seed=cfg.seed,
        config_hash=digest,
    )
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    width = max(6, len(str(len(dataset.labels))))
    for i, image in enumerate(dataset.images):
        fileio.write_pbm(img_dir / f"{i:0{width}d}.pbm", image)
    with open(out / "labels.txt", "w") as fh:
        fh.writelines(f"{int(q)}\n" for q in dataset.labels)
    fileio.dump_json(out / "splits.json", {k: v.tolist() for k, v in dataset.splits.items()})
    fileio.dump_json(
        out / "config.json",
        {
            "config": cfg.to_dict(),
            "config_hash": digest,
            "signal_map": "log|M2 relu(M1 v)| (logit after x/(1+x) squash), floor 1e-6",
            "autoencoder_fit": "full pool, both labels",
        },
    )
    fileio.write_tensor(out / "latents.f64", np.vstack([dataset.u, dataset.v]), kind="latents", config_hash=digest)
    fileio.write_tensor(out / "clean_signals.f64", dataset.clean_signals, kind="clean_signals", config_hash=digest)
    return fileio.write_manifest(out, "dataset", digest, {"n_samples": int(len(dataset.labels))})


def load_dataset(path):
    """Load a dataset directory after verifying its manifest."""
    path = Path(path)
    manifest = fileio.verify_manifest(path, kind="dataset")
    meta = fileio.load_json(path / "config.json")
    cfg = SimConfig.from_dict(meta["config"])
    signals, header = fileio.read_tensor(path / "signals.f64")
    if header.get("config_hash") != manifest["config_hash"]:
        raise ArtifactError("signal tensor config hash does not match the manifest")
    labels = np.loadtxt(path / "labels.txt", dtype=int, ndmin=1)
    files = sorted((path / "images").glob("*.pbm"))
    images = np.stack([fileio.read_pbm(f) for f in files]).astype(np.uint8)
    latents, _ = fileio.read_tensor(path / "latents.f64")
    clean, _ = fileio.read_tensor(path / "clean_signals.f64")
    h = cfg.latent_dim
    splits = {k: np.asarray(v, dtype=np.int64) for k, v in fileio.load_json(path / "splits.json").items()}
    return SimDataset(signals, images, labels, latents[:h], latents[h:], clean, cfg, splits)
