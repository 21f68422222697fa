"""Online window evaluation: surrogate quality by nearest-neighbour matching,
correlation scoring, threshold calibration and detection metrics."""
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fileio
from .cca import cca_batch
from .errors import ArtifactError, ConfigError, InsufficientDataError, ShapeError
from .kernels import nearest_indices
from .linalg import DEFAULT_RIDGE
from .training import Standardizer, load_pair, save_pair

DIAG_OK = "ok"
DIAG_DEGENERATE = "degenerate_covariance"
DIAG_COLLAPSED = "collapsed_match"
DISTANCES = ("standardized", "feature")
MIN_CALIBRATION_WINDOWS = 20


@dataclass
class ReferenceLibrary:
    """Paired normal columns ``X0`` (d1 x N) and ``Y0`` (d2 x N) with a search index.

    ``standardized`` matches on per-coordinate z-scores of raw signals using the
    library's own statistics; ``feature`` matches on encoder outputs ``f(x)``.
    """

    X0: np.ndarray
    Y0: np.ndarray
    distance: str = "standardized"
    scaler: Standardizer = None
    keys: np.ndarray = field(default=None, repr=False)
    encoder: object = field(default=None, repr=False)

    @classmethod
    def build(cls, X0, Y0, distance="standardized", pair=None):
        X0 = np.asarray(X0, dtype=np.float64)
        Y0 = np.asarray(Y0, dtype=np.float64)
        if X0.ndim != 2 or Y0.ndim != 2 or X0.shape[1] != Y0.shape[1]:
            raise ShapeError("library blocks must be 2-D with equal column counts")
        if X0.shape[1] == 0:
            raise InsufficientDataError("reference library is empty")
        if distance not in DISTANCES:
            raise ConfigError(f"unknown distance {distance!r}; choose from {DISTANCES}")
        if distance == "feature" and pair is None:
            raise ConfigError("feature-space matching needs the encoder pair")
        lib = cls(X0, Y0, distance, Standardizer.fit(X0), encoder=pair if distance == "feature" else None)
        lib.keys = lib.query_keys(X0)
        return lib

    @property
    def size(self):
        return self.X0.shape[1]

    def query_keys(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.X0.shape[0]:
            raise ShapeError(f"queries must have {self.X0.shape[0]} rows")
        z = self.encoder.encode_x(X) if self.distance == "feature" else self.scaler(X)
        return np.ascontiguousarray(z.T)

    def match(self, X):
        """Nearest library index for every column of ``X`` (lowest index on ties)."""
        idx, _ = nearest_indices(self.query_keys(X), self.keys)
        return idx


def nearest_match(library, x):
    """Index of the library column closest to ``x`` and its paired quality vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    i = int(library.match(x)[0])
    return i, library.Y0[:, i]


@dataclass
class WindowVerdict:
    score: float
    alarm: bool
    matched: np.ndarray
    diagnostic: str = DIAG_OK
    window_id: object = None

    def line(self):
        """``id score alarm diagnostic`` with the score to 6 decimals."""
        return f"{self.window_id} {self.score:.6f} {int(bool(self.alarm))} {self.diagnostic}"


def empirical_threshold(scores, alpha, upper=False):
    """Largest cut flagging at most ``floor(alpha * m)`` of ``scores``.

    Lower tail (default): ``sup{t : #(s < t) <= alpha m}``, i.e. the
    ``floor(alpha m)``-th order statistic (0-based). Upper tail: the smallest
    ``t`` with ``#(s > t) <= alpha m``. NaN scores count as always flagged.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if s.size == 0:
        raise InsufficientDataError("no scores to calibrate on")
    k = int(np.floor(alpha * s.size))
    if upper:
        s = np.sort(np.where(np.isnan(s), np.inf, s))[::-1]
    else:
        s = np.sort(np.where(np.isnan(s), -np.inf, s))
    return float(s[min(k, s.size - 1)])


@dataclass
class MonitorModel:
    pair: object
    library: ReferenceLibrary
    window_size: int
    threshold: float = None
    alpha: float = None
    ridge: float = DEFAULT_RIDGE

    @property
    def p(self):
        return self.pair.p

    def _check(self, n):
        if n != self.window_size:
            raise ShapeError(f"window has {n} samples but the model was trained with n={self.window_size}")
        if n <= self.p:
            raise ShapeError(f"window size {n} must exceed p={self.p}")

    def score_pooled(self, signals, index):
        """Score windows given as ``(W, n)`` column indices into ``signals``.

        Each distinct column is matched and encoded once. Returns
        ``(scores, matched, diagnostics)``; forced-alarm windows score NaN.
        """
        signals = np.asarray(signals, dtype=np.float64)
        index = np.asarray(index, dtype=np.int64)
        if index.ndim != 2:
            raise ShapeError("window index must be 2-D")
        w, n = index.shape
        self._check(n)
        cols, inverse = np.unique(index, return_inverse=True)
        inverse = inverse.reshape(index.shape)
        sub = signals[:, cols]
        nn = self.library.match(sub)
        matched = nn[inverse]
        fx = self.pair.encode_x(sub)
        ucols, uinv = np.unique(matched, return_inverse=True)
        gy = self.pair.encode_y(self.library.Y0[:, ucols])
        U = fx[:, inverse].transpose(1, 0, 2)
        V = gy[:, uinv.reshape(matched.shape)].transpose(1, 0, 2)
        res = cca_batch(U, V, rel_ridge=self.ridge)
        diag = np.full(w, DIAG_OK, dtype=object)
        diag[~res.ok] = DIAG_DEGENERATE
        collapsed = (matched == matched[:, :1]).all(axis=1)
        diag[collapsed] = DIAG_COLLAPSED
        scores = np.where(collapsed, np.nan, res.scores)
        return scores, matched, diag

    def score_windows(self, windows):
        """Score a ``(W, d1, n)`` stack (or list) of signal windows."""
        stack = np.asarray(windows, dtype=np.float64)
        if stack.ndim == 2:
            stack = stack[None]
        w, d, n = stack.shape
        pooled = stack.transpose(1, 0, 2).reshape(d, w * n)
        return self.score_pooled(pooled, np.arange(w * n).reshape(w, n))

    def window_score(self, X_star):
        """Verdict with score and matches; ``alarm`` is only set for forced alarms."""
        scores, matched, diag = self.score_windows(X_star)
        return WindowVerdict(float(scores[0]), diag[0] != DIAG_OK, matched[0], diag[0])

    def alarms(self, scores, diagnostics):
        if self.threshold is None:
            raise ConfigError("model is not calibrated")
        forced = np.asarray(diagnostics) != DIAG_OK
        return forced | (np.nan_to_num(scores, nan=-np.inf) < self.threshold)

    def detect(self, X_star, window_id=None):
        v = self.window_score(X_star)
        v.alarm = bool(self.alarms(np.array([v.score]), np.array([v.diagnostic]))[0])
        v.window_id = window_id
        return v

    def detect_many(self, windows, ids=None):
        scores, matched, diag = self.score_windows(windows)
        alarm = self.alarms(scores, diag)
        ids = range(len(scores)) if ids is None else ids
        return [WindowVerdict(float(s), bool(a), m, d, i) for s, a, m, d, i in zip(scores, alarm, matched, diag, ids)]

    def calibrated(self, scores, alpha):
        return replace(self, threshold=calibrate_threshold(scores, alpha, self.p), alpha=float(alpha))


def calibrate_threshold(scores, alpha, p):
    """Decision threshold from normal validation window scores, clamped to ``[0, p]``.

    >>> calibrate_threshold(np.arange(1.0, 101.0), 0.05, 200)
    6.0
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < MIN_CALIBRATION_WINDOWS:
        raise InsufficientDataError(f"need at least {MIN_CALIBRATION_WINDOWS} validation windows, got {scores.size}")
    return float(np.clip(empirical_threshold(scores, alpha), 0.0, p))


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class Metrics:
    fpr: float
    fnr: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    def row(self):
        return f"{self.fpr:.2f} / {self.fnr:.2f} / {self.f1:.2f}"


def evaluate(alarms, labels):
    """FPR, FNR and F1 in percent; label 1 (abnormal) is the positive class.

    >>> m = evaluate([1] * 19 + [0] * 181 + [1] * 172 + [0] * 28, [0] * 200 + [1] * 200)
    >>> m.row()
    '9.50 / 14.00 / 87.98'
    """
    a = np.asarray(alarms).astype(bool).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if a.shape != y.shape:
        raise ShapeError("alarms and labels differ in length")
    tp = int(np.sum(a & (y == 1)))
    fp = int(np.sum(a & (y == 0)))
    fn = int(np.sum(~a & (y == 1)))
    tn = int(np.sum(~a & (y == 0)))
    fpr = 100.0 * fp / (fp + tn) if fp + tn else 0.0
    fnr = 100.0 * fn / (fn + tp) if fn + tp else 0.0
    denom = 2 * tp + fp + fn
    f1 = 100.0 * 2 * tp / denom if tp else 0.0
    return Metrics(fpr, fnr, f1, tp, fp, tn, fn)


# ------------------------------------------------------------------ persistence


def save_monitor(model, directory, config_digest=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").unlink(missing_ok=True)
    save_pair(model.pair, directory / "encoders")
    digest = config_digest or fileio.config_hash(model.pair.config)
    lib = model.library
    fileio.write_tensor(directory / "library_x.f64", lib.X0, config_hash=digest)
    fileio.write_tensor(directory / "library_y.f64", lib.Y0, config_hash=digest)
    settings = {
        "window_size": model.window_size,
        "threshold": model.threshold,
        "alpha": model.alpha,
        "ridge": model.ridge,
        "distance": lib.distance,
        "config_hash": digest,
    }
    fileio.dump_json(directory / "monitor.json", settings)
    return fileio.write_manifest(directory, "monitor_model", digest)


def load_monitor(directory):
    directory = Path(directory)
    manifest = fileio.verify_manifest(directory, kind="monitor_model")
    settings = fileio.load_json(directory / "monitor.json")
    pair, _ = load_pair(directory / "encoders")
    x0, hx = fileio.read_tensor(directory / "library_x.f64")
    y0, hy = fileio.read_tensor(directory / "library_y.f64")
    for h in (hx, hy, settings):
        if h.get("config_hash") != manifest["config_hash"]:
            raise ArtifactError(f"{directory}: component config hash does not match the manifest")
    lib = ReferenceLibrary.build(x0, y0, settings["distance"], pair)
    return MonitorModel(pair, lib, int(settings["window_size"]), settings["threshold"], settings["alpha"], settings["ridge"])
