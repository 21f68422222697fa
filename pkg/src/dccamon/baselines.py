"""Comparison monitors: PCA and PLS features with Hotelling T² charts, and a
per-sample classifier with window voting."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError, ShapeError
from .linalg import sym_eig
from .monitor import empirical_threshold
from .nn import _forward_cache, backward, init_mlp, rmsprop_step, RmsPropState
from .training import Standardizer

WINDOW_STATS = ("mean", "max", "window_mean")


# ------------------------------------------------------------------ T² chart


@dataclass
class T2Chart:
    mean: np.ndarray
    cov_inv: np.ndarray
    kind: str = "mean"
    limit: float = None

    @classmethod
    def fit(cls, features, kind="mean"):
        """Mean and inverse covariance of in-control features ``(k, N)``."""
        if kind not in WINDOW_STATS:
            raise ConfigError(f"unknown window statistic {kind!r}; choose from {WINDOW_STATS}")
        z = np.asarray(features, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] < 2:
            raise InsufficientDataError("need a (k, N) feature block with N >= 2")
        mean = z.mean(axis=1)
        zc = z - mean[:, None]
        cov = zc @ zc.T / (z.shape[1] - 1)
        eig = sym_eig(cov)
        vals = eig.eigenvalues
        if vals[-1] <= 1e-12 * max(vals[0], 1e-300):
            # singular features: ridge fallback relative to the trace
            vals = vals + 1e-8 * np.trace(cov) / cov.shape[0]
        vecs = eig.eigenvectors
        return cls(mean, (vecs / vals) @ vecs.T, kind)

    def sample_t2(self, features):
        zc = np.asarray(features, dtype=np.float64) - self.mean[:, None]
        return np.einsum("in,ij,jn->n", zc, self.cov_inv, zc)

    def window_stat(self, features):
        """Statistic of one window of features ``(k, n)``."""
        features = np.asarray(features, dtype=np.float64)
        if self.kind == "window_mean":
            n = features.shape[1]
            return float(n * self.sample_t2(features.mean(axis=1, keepdims=True))[0])
        t2 = self.sample_t2(features)
        return float(t2.mean() if self.kind == "mean" else t2.max())

    def window_stats(self, stack):
        """Statistics for a ``(W, k, n)`` stack."""
        stack = np.asarray(stack, dtype=np.float64)
        w, k, n = stack.shape
        flat = stack.transpose(1, 0, 2).reshape(k, w * n)
        if self.kind == "window_mean":
            return n * self.sample_t2(stack.mean(axis=2).T)
        t2 = self.sample_t2(flat).reshape(w, n)
        return t2.mean(axis=1) if self.kind == "mean" else t2.max(axis=1)

    def calibrate(self, validation_stats, alpha):
        """Upper control limit flagging at most ``alpha`` of the validation windows."""
        self.limit = empirical_threshold(validation_stats, alpha, upper=True)
        return self.limit

    def alarms(self, stats):
        if self.limit is None:
            raise ConfigError("chart has no control limit")
        return np.asarray(stats) > self.limit


# ------------------------------------------------------------------ PCA


@dataclass
class PcaModel:
    components: np.ndarray  # (d, k), orthonormal columns
    scaler: Standardizer
    explained: float
    eigenvalues: np.ndarray

    @property
    def k(self):
        return self.components.shape[1]

    def transform(self, X):
        return self.components.T @ self.scaler(X)


def pca_fit(signals, variance=0.9):
    """Principal components of standardised normal signals reaching ``variance``."""
    X = np.asarray(signals, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise InsufficientDataError("need a (d, N) block with N >= 2")
    scaler = Standardizer.fit(X)
    Z = scaler(X)
    eig = sym_eig(Z @ Z.T / (Z.shape[1] - 1))
    vals = np.clip(eig.eigenvalues, 0.0, None)
    ratio = np.cumsum(vals) / vals.sum()
    k = int(np.searchsorted(ratio, variance - 1e-12) + 1)
    k = min(k, len(vals))
    return PcaModel(eig.eigenvectors[:, :k].copy(), scaler, float(ratio[k - 1]), vals)


# ------------------------------------------------------------------ PLS


@dataclass
class PlsModel:
    weights: np.ndarray  # (d, k) W
    loadings: np.ndarray  # (d, k) P
    response_loadings: np.ndarray  # (q, k) C
    x_scaler: Standardizer
    y_scaler: Standardizer
    train_scores: np.ndarray  # (N, k)

    @property
    def k(self):
        return self.weights.shape[1]

    @property
    def rotation(self):
        """``R = W (P^T W)^{-1}`` so that scores of new data are ``R^T x``."""
        return self.weights @ np.linalg.inv(self.loadings.T @ self.weights)

    def transform(self, X):
        return self.rotation.T @ self.x_scaler(X)


def pls_fit(signals, responses, k, max_iter=500, tol=1e-12):
    """NIPALS partial least squares with ``k`` components.

    Parameters
    ----------
    signals : ndarray, shape (d, N)
    responses : ndarray, shape (q, N)
        Flattened quality data of the same samples.
    """
    if k < 1:
        raise ConfigError("PLS needs at least one component")
    X = np.asarray(signals, dtype=np.float64)
    Y = np.asarray(responses, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError("signals and responses must have the same number of columns")
    if k > X.shape[0]:
        raise ConfigError(f"k={k} exceeds the signal dimension {X.shape[0]}")
    if not np.any(Y.std(axis=1) > 0):
        raise InsufficientDataError("response has zero variance")
    xs, ys = Standardizer.fit(X), Standardizer.fit(Y)
    E = xs(X).T.copy()
    F = ys(Y).T.copy()
    d, q, n = X.shape[0], Y.shape[0], X.shape[1]
    W, P, C, T = np.zeros((d, k)), np.zeros((d, k)), np.zeros((q, k)), np.zeros((n, k))
    for a in range(k):
        u = F[:, np.argmax((F * F).sum(axis=0))].copy()
        t_old = None
        for _ in range(max_iter):
            w = E.T @ u
            w /= np.linalg.norm(w)
            t = E @ w
            c = F.T @ t / (t @ t)
            u = F @ c / (c @ c)
            if t_old is not None and np.linalg.norm(t - t_old) <= tol * np.linalg.norm(t):
                break
            t_old = t
        p = E.T @ t / (t @ t)
        E -= np.outer(t, p)
        F -= np.outer(t, c)
        W[:, a], P[:, a], C[:, a], T[:, a] = w, p, c, t
    return PlsModel(W, P, C, xs, ys, T)


# ------------------------------------------------------------------ classifier


@dataclass
class ClassifierModel:
    net: object
    scaler: Standardizer
    history: list

    def predict_proba(self, X):
        z = _forward_cache(self.net, self.scaler(X))[0][-1][0]
        return 1.0 / (1.0 + np.exp(-z))

    def votes(self, X):
        return (self.predict_proba(X) > 0.5).astype(int)


def classifier_fit(signals, labels, seed=0, hidden=(64, 32, 16, 16), epochs=500, lr=1e-3, batch_size=256):
    """Sigmoid-output MLP on randomly oversampled classes (binary cross-entropy)."""
    X = np.asarray(signals, dtype=np.float64)
    y = np.asarray(labels).astype(int).ravel()
    if X.shape[1] != y.size:
        raise ShapeError("one label per signal column required")
    if np.unique(y).size < 2:
        raise InsufficientDataError("classifier training needs both classes")
    rng = np.random.default_rng(seed)
    counts = np.bincount(y, minlength=2)
    big = int(np.argmax(counts))
    idx_big = np.flatnonzero(y == big)
    idx_small = np.flatnonzero(y != big)
    extra = rng.choice(idx_small, size=counts[big] - counts[1 - big], replace=True)
    pool = np.concatenate([idx_big, idx_small, extra])
    scaler = Standardizer.fit(X)
    Z = scaler(X)
    net = init_mlp([X.shape[0], *hidden, 1], rng)
    opt = RmsPropState(lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(pool)
        total = 0.0
        for start in range(0, order.size, batch_size):
            cols = order[start:start + batch_size]
            xb, yb = Z[:, cols], y[cols]
            cache = _forward_cache(net, xb)
            logit = cache[0][-1][0]
            prob = 1.0 / (1.0 + np.exp(-logit))
            total += float(np.sum(np.logaddexp(0.0, logit) - yb * logit))
            up = ((prob - yb) / cols.size)[None, :]
            grads = backward(net, xb, up, cache).params()
            net.set_params(rmsprop_step(opt, net.params(), grads))
        history.append(total / order.size)
    return ClassifierModel(net, scaler, history)


def classifier_window_vote(model, window, T):
    """Alarm when more than ``T`` samples of the window are classified abnormal."""
    return int(model.votes(window).sum()) > T
