"""Offline DCCA training on windows of paired process/quality samples.

Windows are stored as index arrays into shared sample pools (``WindowSet``), so
features are computed once per distinct sample per epoch and the window
gradients are scattered back onto those samples. Any list of ``DataWindow``
objects converts to the same representation.
"""
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .cca import cca_batch
from .errors import ArtifactError, ConfigError, DegenerateWindowError, DivergenceError, InsufficientDataError, ShapeError
from .linalg import DEFAULT_RIDGE
from .nn import Mlp, _forward_cache, backward, init_mlp, load_mlp, rmsprop_step, RmsPropState, save_mlp

NORMAL, ABNORMAL = "normal", "abnormal"


@dataclass
class DataWindow:
    X: np.ndarray  # (d1, n) process signals
    Y: np.ndarray  # (d2, n) quality data
    label: str = NORMAL

    def __post_init__(self):
        if self.X.shape[1] != self.Y.shape[1]:
            raise ShapeError("X and Y windows must have the same number of columns")

    @property
    def n(self):
        return self.X.shape[1]


class WindowSet(Sequence):
    """Windows as ``(W, n)`` index arrays into a signal pool and a quality pool."""

    def __init__(self, signals, quality, x_index, y_index=None, label=NORMAL):
        self.signals = np.asarray(signals, dtype=np.float64)
        self.quality = np.asarray(quality, dtype=np.float64)
        self.x_index = np.asarray(x_index, dtype=np.int64)
        self.y_index = self.x_index if y_index is None else np.asarray(y_index, dtype=np.int64)
        self.label = label
        if self.x_index.ndim != 2 or self.x_index.shape != self.y_index.shape:
            raise ShapeError("window index arrays must be 2-D and of equal shape")

    @classmethod
    def from_windows(cls, windows):
        if isinstance(windows, WindowSet):
            return windows
        windows = list(windows)
        if not windows:
            raise InsufficientDataError("no windows given")
        n = windows[0].n
        if any(w.n != n for w in windows):
            raise ShapeError("all windows must share the same size")
        x = np.hstack([w.X for w in windows])
        y = np.hstack([w.Y for w in windows])
        index = np.arange(len(windows) * n).reshape(len(windows), n)
        return cls(x, y, index, label=windows[0].label)

    def __len__(self):
        return self.x_index.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return WindowSet(self.signals, self.quality, self.x_index[i], self.y_index[i], self.label)
        return DataWindow(self.signals[:, self.x_index[i]], self.quality[:, self.y_index[i]], self.label)

    @property
    def n(self):
        return self.x_index.shape[1]

    def take(self, rows):
        return WindowSet(self.signals, self.quality, self.x_index[rows], self.y_index[rows], self.label)


def make_windows(signals, quality, n, count, seed=0, mode="bootstrap", label=NORMAL):
    """Group paired columns into windows of size ``n``.

    ``disjoint`` partitions a random permutation; ``bootstrap`` draws each window
    without replacement, independently across windows. Signal and quality columns
    keep their pairing.
    """
    signals = np.asarray(signals, dtype=np.float64)
    quality = np.asarray(quality, dtype=np.float64)
    total = signals.shape[1]
    if quality.shape[1] != total:
        raise ShapeError("signals and quality must have the same number of columns")
    if n < 1 or count < 1:
        raise ValueError("window size and count must be positive")
    rng = np.random.default_rng(seed)
    if mode == "disjoint":
        if count * n > total:
            raise InsufficientDataError(f"{count} disjoint windows of {n} need {count * n} samples, have {total}")
        index = rng.permutation(total)[: count * n].reshape(count, n)
    elif mode == "bootstrap":
        if n > total:
            raise InsufficientDataError(f"window size {n} exceeds the {total} available samples")
        index = np.stack([rng.choice(total, size=n, replace=False) for _ in range(count)])
    else:
        raise ValueError(f"unknown window mode {mode!r}")
    return WindowSet(signals, quality, index, label=label)


# ------------------------------------------------------------------ models


@dataclass
class Standardizer:
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data, per_coordinate=True):
        data = np.asarray(data, dtype=np.float64)
        shift = data.mean(axis=1)
        if per_coordinate:
            scale = data.std(axis=1)
            scale[scale < 1e-12] = 1.0
        else:
            s = float(data.std())
            scale = np.full(data.shape[0], s if s > 1e-12 else 1.0)
        return cls(shift, scale)

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d))

    def __call__(self, data):
        return (np.asarray(data, dtype=np.float64) - self.shift[:, None]) / self.scale[:, None]


@dataclass
class TrainConfig:
    window_size: int = 25
    dim: int = 6
    epochs: int = 500
    lr: float = 0.1
    ridge: float = DEFAULT_RIDGE  # relative to trace(S) / p
    seed: int = 0
    beta: float = 0.0
    n_normal_windows: int = 1000
    n_abnormal_windows: int = 0
    signal_hidden: tuple = (64, 32)
    quality_hidden: tuple = (256, 64)
    batch_windows: int = 0  # 0 = full batch

    def validate(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.window_size <= self.dim:
            raise ConfigError(f"window size {self.window_size} must exceed dim {self.dim}")
        if self.dim < 1 or self.epochs < 0 or self.lr <= 0 or self.ridge < 0:
            raise ConfigError("dim >= 1, epochs >= 0, lr > 0 and ridge >= 0 required")
        return self

    def to_dict(self):
        d = asdict(self)
        d["signal_hidden"] = list(self.signal_hidden)
        d["quality_hidden"] = list(self.quality_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("signal_hidden", "quality_hidden"):
            if key in d:
                d[key] = tuple(d[key]) if isinstance(d[key], (list, tuple)) else (d[key],)
        return cls(**d)

    def digest(self):
        return fileio.config_hash(self.to_dict())


@dataclass
class EncoderPair:
    f: Mlp
    g: Mlp
    p: int
    x_scaler: Standardizer
    y_scaler: Standardizer
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f.output_width != self.p or self.g.output_width != self.p:
            raise ShapeError("both encoders must output p features")

    def encode_x(self, X):
        return _forward_cache(self.f, self.x_scaler(X))[0][-1]

    def encode_y(self, Y):
        return _forward_cache(self.g, self.y_scaler(Y))[0][-1]

    def params(self):
        return self.f.params() + self.g.params()

    def set_params(self, params):
        k = len(self.f.params())
        self.f.set_params(params[:k])
        self.g.set_params(params[k:])

    def copy(self):
        return EncoderPair(self.f.copy(), self.g.copy(), self.p, self.x_scaler, self.y_scaler, dict(self.config))


def init_pair(config, d1, d2, x_scaler=None, y_scaler=None):
    rng = np.random.default_rng(config.seed)
    f = init_mlp([d1, *config.signal_hidden, config.dim], rng)
    g = init_mlp([d2, *config.quality_hidden, config.dim], rng)
    return EncoderPair(
        f,
        g,
        config.dim,
        x_scaler or Standardizer.identity(d1),
        y_scaler or Standardizer.identity(d2),
        config.to_dict(),
    )


# ------------------------------------------------------------------ loss


def _pooled_features(net, scaler, source, index):
    cols, inverse = np.unique(index, return_inverse=True)
    inputs = scaler(source[:, cols])
    cache = _forward_cache(net, inputs)
    feats = cache[0][-1]
    stack = feats[:, inverse.reshape(index.shape)].transpose(1, 0, 2)
    return stack, inverse.reshape(-1), inputs, cache


def _scatter(grad_stack, inverse, m):
    w, p, n = grad_stack.shape
    flat = grad_stack.transpose(1, 0, 2).reshape(p, w * n)
    return np.stack([np.bincount(inverse, weights=row, minlength=m) for row in flat])


def _term(pair, windows, ridge, weight):
    """Mean score of ``windows`` and the gradient of ``weight * mean`` for f and g."""
    U, inv_x, in_x, cache_x = _pooled_features(pair.f, pair.x_scaler, windows.signals, windows.x_index)
    V, inv_y, in_y, cache_y = _pooled_features(pair.g, pair.y_scaler, windows.quality, windows.y_index)
    res = cca_batch(U, V, rel_ridge=ridge, grad=True)
    if not res.ok.all():
        raise DegenerateWindowError(f"{int((~res.ok).sum())} window(s) have singular feature covariance")
    scale = weight / len(windows)
    up_x = _scatter(res.grad_u * scale, inv_x, in_x.shape[1])
    up_y = _scatter(res.grad_v * scale, inv_y, in_y.shape[1])
    gf = backward(pair.f, in_x, up_x, cache_x).params()
    gg = backward(pair.g, in_y, up_y, cache_y).params()
    return float(res.scores.mean()), gf + gg, res.scores


def loss_and_grads(pair, normal, abnormal=None, beta=0.0, ridge=DEFAULT_RIDGE):
    """Training loss and its gradient with respect to all encoder parameters.

    ``loss = -mean H(f(X), g(Y)) over normal + beta * mean H over abnormal``.

    Returns
    -------
    loss : float
    grads : list of ndarray
        Same order as ``pair.params()``.
    """
    normal = WindowSet.from_windows(normal)
    if normal.n <= pair.p:
        raise ShapeError(f"window size {normal.n} must exceed p={pair.p}")
    mean0, grads, _ = _term(pair, normal, ridge, -1.0)
    loss = -mean0
    if beta:
        if abnormal is None or len(abnormal) == 0:
            raise InsufficientDataError("beta > 0 requires abnormal windows")
        abnormal = WindowSet.from_windows(abnormal)
        mean1, g1, _ = _term(pair, abnormal, ridge, beta)
        loss += beta * mean1
        grads = [a + b for a, b in zip(grads, g1)]
    return loss, grads


def window_scores(pair, windows, ridge=DEFAULT_RIDGE):
    """Scores of windows with their stored pairing (NaN for degenerate windows)."""
    windows = WindowSet.from_windows(windows)
    U, *_ = _pooled_features(pair.f, pair.x_scaler, windows.signals, windows.x_index)
    V, *_ = _pooled_features(pair.g, pair.y_scaler, windows.quality, windows.y_index)
    return cca_batch(U, V, rel_ridge=ridge).scores


@dataclass
class TrainResult:
    pair: EncoderPair
    history: list
    ridge: float


def _repair_abnormal(abnormal, normal_quality, rng):
    total = normal_quality.shape[1]
    y_index = np.stack([rng.choice(total, size=abnormal.n, replace=False) for _ in range(len(abnormal))])
    return WindowSet(abnormal.signals, normal_quality, abnormal.x_index, y_index, ABNORMAL)


def train(config, normal, abnormal=None, pair=None, x_scaler=None, y_scaler=None, log=None):
    """Fit an encoder pair by RMSProp on the windowed correlation loss.

    Abnormal windows (used only when ``config.beta > 0``) are re-paired every
    epoch with random quality columns drawn from the normal pool.

    Returns ``TrainResult`` with the per-epoch loss history.
    """
    config.validate()
    normal = WindowSet.from_windows(normal)
    if len(normal) == 0:
        raise InsufficientDataError("at least one normal window is required")
    if normal.n != config.window_size:
        raise ShapeError(f"windows have size {normal.n}, config expects {config.window_size}")
    if abnormal is not None and len(abnormal):
        abnormal = WindowSet.from_windows(abnormal)
    else:
        abnormal = None
    if config.beta and abnormal is None:
        raise InsufficientDataError("beta > 0 requires abnormal windows")
    if pair is None:
        pair = init_pair(config, normal.signals.shape[0], normal.quality.shape[0], x_scaler, y_scaler)
    rng = np.random.default_rng([config.seed, 1])
    opt = RmsPropState(lr=config.lr)
    history = []
    params = pair.params()
    for epoch in range(config.epochs):
        if config.batch_windows:
            order = rng.permutation(len(normal))
            batches = [order[i:i + config.batch_windows] for i in range(0, len(normal), config.batch_windows)]
        else:
            batches = [None]
        total = 0.0
        for rows in batches:
            part = normal if rows is None else normal.take(rows)
            ab = _repair_abnormal(abnormal, normal.quality, rng) if config.beta else None
            try:
                loss, grads = loss_and_grads(pair, part, ab, config.beta, config.ridge)
            except DegenerateWindowError as exc:
                raise DivergenceError(f"degenerate features: {exc}", epoch) from None
            if not np.isfinite(loss):
                raise DivergenceError("training loss is not finite", epoch)
            try:
                params = rmsprop_step(opt, params, grads)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), epoch) from None
            pair.set_params(params)
            total += loss * (1 if rows is None else len(rows) / len(normal))
        history.append(total)
        if log is not None and (epoch % 50 == 0 or epoch == config.epochs - 1):
            log(f"epoch {epoch:4d}  loss {total:+.5f}")
    return TrainResult(pair, history, config.ridge)


# ------------------------------------------------------------------ checkpoints


def save_pair(pair, directory, history=None, extra=None):
    """Checkpoint directory: one network file per encoder plus a config sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").unlink(missing_ok=True)
    cfg = dict(pair.config)
    digest = fileio.config_hash(cfg)
    save_mlp(pair.f, directory / "f.mlp", role="signal_encoder", config_hash=digest,
             input_shift=pair.x_scaler.shift.tolist(), input_scale=pair.x_scaler.scale.tolist())
    save_mlp(pair.g, directory / "g.mlp", role="quality_encoder", config_hash=digest,
             input_shift=pair.y_scaler.shift.tolist(), input_scale=pair.y_scaler.scale.tolist())
    sidecar = "[train]\n" + "".join(f"{k} = {_ini_value(v)}\n" for k, v in sorted(cfg.items()))
    sidecar += f"\n[meta]\nconfig_hash = {digest}\np = {pair.p}\n"
    (directory / "config.ini").write_text(sidecar)
    if history is not None:
        fileio.write_tensor(directory / "history.f64", np.asarray(history), kind="loss_history",
                            config_hash=digest, ridge_rel=cfg.get("ridge"))
    return fileio.write_manifest(directory, "encoder_pair", digest, extra)


def _ini_value(v):
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def load_pair(directory):
    directory = Path(directory)
    manifest = fileio.verify_manifest(directory, kind="encoder_pair")
    f, fh = load_mlp(directory / "f.mlp")
    g, gh = load_mlp(directory / "g.mlp")
    for h in (fh, gh):
        if h.get("config_hash") != manifest["config_hash"]:
            raise ArtifactError(f"{directory}: encoder file config hash does not match the manifest")
    ini = fileio.read_config(directory / "config.ini")
    cfg = {}
    for key, raw in ini["train"].items():
        cfg[key] = _parse_ini_value(raw)
    pair = EncoderPair(
        f, g, int(ini["meta"]["p"]),
        Standardizer(np.asarray(fh["input_shift"]), np.asarray(fh["input_scale"])),
        Standardizer(np.asarray(gh["input_shift"]), np.asarray(gh["input_scale"])),
        TrainConfig.from_dict(cfg).to_dict(),
    )
    if fileio.config_hash(pair.config) != manifest["config_hash"]:
        raise ArtifactError(f"{directory}: config sidecar does not match the manifest hash")
    return pair, manifest


def _parse_ini_value(raw):
    if "," in raw:
        return [_parse_ini_value(x.strip()) for x in raw.split(",") if x.strip()]
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw
