"""Windowed canonical-correlation score, its gradient, and a Gaussian ground truth.

The score of a window ``(U, V)`` with ``U, V`` of shape ``(p, n)`` is the trace
norm of the whitened cross-covariance

    T = S11^{-1/2} S12 S22^{-1/2},

i.e. the sum of all ``p`` sample canonical correlations. Rows are mean-centred
per window before the covariances are formed.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWindowError, ShapeError
from .linalg import inv_sqrt_spd_batch, nuclear_norm, svd_small_batch


@dataclass(frozen=True)
class CcaSolution:
    score: float
    T: np.ndarray
    left_dirs: np.ndarray
    right_dirs: np.ndarray
    singulars: np.ndarray
    left_whitener: np.ndarray
    right_whitener: np.ndarray

    @property
    def left_projection(self):
        """Canonical directions for ``U``: columns ``w`` with ``w^T S11 w = 1``."""
        return self.left_whitener @ self.left_dirs

    @property
    def right_projection(self):
        return self.right_whitener @ self.right_dirs


@dataclass
class BatchResult:
    """Scores for a stack of windows; gradients are present only when requested."""

    scores: np.ndarray
    ok: np.ndarray
    T: np.ndarray = None
    left: np.ndarray = None
    singulars: np.ndarray = None
    right: np.ndarray = None
    r1: np.ndarray = None
    r2: np.ndarray = None
    grad_u: np.ndarray = None
    grad_v: np.ndarray = None


def _as_stack(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"{name} must have shape (windows, p, n)")
    return a


def cca_batch(U, V, ridge=0.0, rel_ridge=0.0, grad=False):
    """Score (and optionally differentiate) a stack of windows at once.

    Parameters
    ----------
    U, V : ndarray, shape (B, p, n)
    ridge : float
        Absolute ridge added to both auto-covariances.
    rel_ridge : float
        Additional ridge ``rel_ridge * trace(S) / p``, differentiated exactly.
    grad : bool
        Also return ``dH/dU`` and ``dH/dV``.

    Windows whose regularised covariance fails the positivity floor get
    ``ok = False``, score NaN and zero gradient.
    """
    U = _as_stack(U, "U")
    V = _as_stack(V, "V")
    if U.shape != V.shape:
        raise ShapeError(f"U and V shapes differ: {U.shape} vs {V.shape}")
    b, p, n = U.shape
    if n <= p:
        raise ShapeError(f"window too small: n={n} must exceed p={p}")
    if ridge < 0 or rel_ridge < 0:
        raise ValueError("ridge must be nonnegative")
    uc = U - U.mean(axis=2, keepdims=True)
    vc = V - V.mean(axis=2, keepdims=True)
    s11 = np.einsum("bin,bjn->bij", uc, uc) / (n - 1)
    s22 = np.einsum("bin,bjn->bij", vc, vc) / (n - 1)
    s12 = np.einsum("bin,bjn->bij", uc, vc) / (n - 1)
    tr = lambda s: np.trace(s, axis1=1, axis2=2) / p  # noqa: E731
    r1, _, _, ok1 = inv_sqrt_spd_batch(s11, ridge + rel_ridge * tr(s11))
    r2, _, _, ok2 = inv_sqrt_spd_batch(s22, ridge + rel_ridge * tr(s22))
    ok = ok1 & ok2
    r1 = np.where(ok[:, None, None], r1, 0.0)
    r2 = np.where(ok[:, None, None], r2, 0.0)
    t = r1 @ s12 @ r2
    left, sing, right = svd_small_batch(t)
    scores = np.where(ok, sing.sum(axis=1), np.nan)
    out = BatchResult(scores=scores, ok=ok, T=t, left=left, singulars=sing, right=right, r1=r1, r2=r2)
    if not grad:
        return out
    eye = np.eye(p)
    d12 = r1 @ left @ np.swapaxes(right, 1, 2) @ r2
    d11 = -0.5 * r1 @ (left * sing[:, None, :]) @ np.swapaxes(left, 1, 2) @ r1
    d22 = -0.5 * r2 @ (right * sing[:, None, :]) @ np.swapaxes(right, 1, 2) @ r2
    if rel_ridge:
        # the relative ridge depends on trace(S), contributing (rel/p) tr(D) I
        d11 = d11 + (rel_ridge / p) * np.trace(d11, axis1=1, axis2=2)[:, None, None] * eye
        d22 = d22 + (rel_ridge / p) * np.trace(d22, axis1=1, axis2=2)[:, None, None] * eye
    # rows of uc, vc are already centred, so the centring Jacobian is absorbed
    out.grad_u = (2.0 * d11 @ uc + d12 @ vc) / (n - 1)
    out.grad_v = (2.0 * d22 @ vc + np.swapaxes(d12, 1, 2) @ uc) / (n - 1)
    out.grad_u[~ok] = 0.0
    out.grad_v[~ok] = 0.0
    return out


def _single(U, V):
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2:
        raise ShapeError("U and V must be 2-D (p, n)")
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
        raise ValueError("non-finite entries")
    return U[None], V[None]


def cca_score(U, V, ridge=0.0, rel_ridge=0.0):
    """Canonical correlation score of one window.

    >>> rng = np.random.default_rng(0)
    >>> U = rng.normal(size=(2, 50))
    >>> round(cca_score(U, U).score, 10)
    2.0
    """
    res = cca_batch(*_single(U, V), ridge=ridge, rel_ridge=rel_ridge)
    if not res.ok[0]:
        raise DegenerateWindowError("feature covariance is singular after regularisation")
    return CcaSolution(
        score=float(res.scores[0]),
        T=res.T[0],
        left_dirs=res.left[0],
        right_dirs=res.right[0],
        singulars=res.singulars[0],
        left_whitener=res.r1[0],
        right_whitener=res.r2[0],
    )


def cca_score_gradient(U, V, ridge=0.0, rel_ridge=0.0):
    """Gradient of the score with respect to every entry of ``U`` and ``V``."""
    res = cca_batch(*_single(U, V), ridge=ridge, rel_ridge=rel_ridge, grad=True)
    if not res.ok[0]:
        raise DegenerateWindowError("feature covariance is singular after regularisation")
    return res.grad_u[0], res.grad_v[0]


# ---------------------------------------------------------------- ground truth


@dataclass(frozen=True)
class GaussianCcaSpec:
    p: int
    covariance: np.ndarray  # (2p, 2p), blocks [[S11, S12], [S21, S22]]
    true_rho: float

    @property
    def blocks(self):
        p = self.p
        c = self.covariance
        return c[:p, :p], c[:p, p:], c[p:, p:]


def population_rho(covariance, p):
    """Sum of population canonical correlations from a joint covariance."""
    from .linalg import inv_sqrt_spd

    c = np.asarray(covariance, dtype=np.float64)
    t = inv_sqrt_spd(c[:p, :p]) @ c[:p, p:] @ inv_sqrt_spd(c[p:, p:])
    return nuclear_norm(t)


def _random_orthogonal(rng, p):
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def make_gaussian_spec(p, target_singulars, seed=0):
    """Joint Gaussian with identity auto-covariances and prescribed canonical correlations."""
    s = np.asarray(target_singulars, dtype=np.float64)
    if s.shape != (p,):
        raise ShapeError(f"need {p} target singular values, got {s.shape}")
    if np.any(s < 0) or np.any(s >= 1):
        raise ValueError("canonical correlations must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    q1 = _random_orthogonal(rng, p)
    q2 = _random_orthogonal(rng, p)
    cov = np.eye(2 * p)
    cross = q1 @ np.diag(s) @ q2.T
    cov[:p, p:] = cross
    cov[p:, :p] = cross.T
    return GaussianCcaSpec(p=p, covariance=cov, true_rho=float(s.sum()))


def sample_gaussian(spec, n, seed=0):
    """Draw ``n`` i.i.d. columns; returns ``(X, Y)`` each of shape ``(p, n)``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(spec.covariance)
    z = chol @ rng.standard_normal((2 * spec.p, n))
    return z[: spec.p], z[spec.p:]
