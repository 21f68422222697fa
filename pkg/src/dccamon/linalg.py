"""Dense matrix primitives: covariance, symmetric eigensystems, inverse roots, SVD.

Matrices follow the column-sample convention used throughout the package: a data
block of shape ``(p, n)`` holds ``n`` observations of a ``p``-vector.

Every routine has a batched form operating on stacks ``(B, p, p)``; the scalar
forms are thin wrappers that raise instead of returning validity masks.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateWindowError, ShapeError

#: eigenvalue floor, relative to the largest eigenvalue, below which a
#: regularised covariance is treated as singular
POSITIVITY_FLOOR = 1e-12
#: default ridge factor, relative to ``trace(M) / p``
DEFAULT_RIDGE = 1e-4


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite entries")


def centered_covariance(a, b=None, center=True):
    """Sample (cross-)covariance ``A_c B_c^T / (n - 1)``.

    Parameters
    ----------
    a : ndarray, shape (p, n)
    b : ndarray, shape (q, n), optional
        Defaults to ``a`` (auto-covariance).
    center : bool
        Subtract the row means before forming the product.
    """
    a = np.asarray(a, dtype=np.float64)
    same = b is None
    b = a if same else np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("covariance inputs must be 2-D")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    n = a.shape[1]
    if n < 2:
        raise ShapeError("need at least two observations")
    _check_finite(a, b)
    if center:
        a = a - a.mean(axis=1, keepdims=True)
        b = a if same else b - b.mean(axis=1, keepdims=True)
    return a @ b.T / (n - 1)


def _sign_fix(vecs):
    # make the largest-magnitude entry of every column positive
    b, p, k = vecs.shape
    pick = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(np.take_along_axis(vecs, pick[:, None, :], axis=1))
    signs[signs == 0] = 1.0
    return vecs * signs


def sym_eig_batch(stack):
    """Eigensystems of a stack of symmetric matrices, eigenvalues descending."""
    stack = np.asarray(stack, dtype=np.float64)
    vals, vecs = kernels.jacobi_eigh_batch(np.ascontiguousarray(stack))
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    return vals, _sign_fix(vecs)


def sym_eig(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError("square matrix required")
    _check_finite(m)
    vals, vecs = sym_eig_batch(m[None])
    return SymEig(vals[0], vecs[0])


def _trace_ridge(stack, rel):
    p = stack.shape[-1]
    return rel * np.trace(stack, axis1=-2, axis2=-1) / p


def inv_sqrt_spd_batch(stack, ridge=0.0):
    """Inverse square roots of ``M + ridge I`` for a stack of symmetric matrices.

    ``ridge`` may be a scalar or a per-matrix array. Returns ``(roots, vals,
    vecs, ok)`` where ``vals``/``vecs`` describe ``M + ridge I`` and ``ok`` flags
    matrices that passed the positivity floor. Failed entries hold NaN.
    """
    stack = np.asarray(stack, dtype=np.float64)
    p = stack.shape[-1]
    ridge = np.broadcast_to(np.asarray(ridge, dtype=np.float64), stack.shape[:1])
    reg = stack + ridge[:, None, None] * np.eye(p)
    vals, vecs = sym_eig_batch(reg)
    top = vals[:, 0]
    ok = (top > 0) & (vals[:, -1] >= POSITIVITY_FLOOR * top)
    safe = np.where(ok[:, None], vals, 1.0)
    roots = np.einsum("bij,bj,bkj->bik", vecs, 1.0 / np.sqrt(safe), vecs)
    roots[~ok] = np.nan
    return roots, vals, vecs, ok


def inv_sqrt_spd(m, ridge=0.0):
    """Symmetric inverse square root ``(M + ridge I)^{-1/2}``.

    Raises
    ------
    ValueError
        If ``m`` is not symmetric.
    DegenerateWindowError
        If the smallest eigenvalue falls below ``POSITIVITY_FLOOR`` times the largest.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError("square matrix required")
    _check_finite(m)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    scale = max(np.abs(m).max(), 1e-300)
    if np.abs(m - m.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    roots, vals, _, ok = inv_sqrt_spd_batch(m[None], ridge)
    if not ok[0]:
        raise DegenerateWindowError(
            f"smallest eigenvalue {vals[0, -1]:.3e} below positivity floor "
            f"(largest {vals[0, 0]:.3e})"
        )
    return roots[0]


def _complete_basis(left, good):
    """Replace columns of ``left`` not flagged in ``good`` by an orthonormal completion."""
    p, k = left.shape
    kept = left[:, good]
    q, _ = np.linalg.qr(np.hstack([kept, np.eye(p)]))
    fill = q[:, kept.shape[1]:]
    # drop directions already spanned (QR of the augmented block is full rank p)
    out = left.copy()
    out[:, ~good] = fill[:, : int((~good).sum())]
    return out


def svd_small_batch(stack):
    """Thin SVD of a stack of square matrices via the eigensystem of ``M^T M``.

    Returns ``(left, singulars, right)`` with ``M = left @ diag(s) @ right.T`` and
    singular values descending. Columns of ``left`` whose singular value is
    numerically zero (below ``1e-7`` of the largest) are filled with an orthonormal completion.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[-1] != stack.shape[-2]:
        raise ShapeError("svd_small_batch expects square matrices")
    gram = np.einsum("bji,bjk->bik", stack, stack)
    vals, right = sym_eig_batch(gram)
    sing = np.sqrt(np.clip(vals, 0.0, None))
    top = sing[:, :1]
    # singular values come from Gram eigenvalues, so anything below ~sqrt(eps) of
    # the largest is indistinguishable from zero
    good = sing > 1e-7 * np.maximum(top, 1e-300)
    safe = np.where(good, sing, 1.0)
    left = np.einsum("bij,bjk->bik", stack, right) / safe[:, None, :]
    for b in np.flatnonzero(~good.all(axis=1)):
        left[b] = _complete_basis(np.where(good[b], left[b], 0.0), good[b])
    return left, sing, right


def svd_small(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError("2-D matrix required")
    _check_finite(m)
    transpose = m.shape[0] < m.shape[1]
    work = m.T if transpose else m
    p, q = work.shape
    if p != q:
        # reduce a tall matrix to its square triangular factor first
        qfac, r = np.linalg.qr(work)
        left, s, right = svd_small_batch(r[None])
        left = qfac @ left[0]
        s, right = s[0], right[0]
    else:
        left, s, right = (x[0] for x in svd_small_batch(work[None]))
    return (right, s, left) if transpose else (left, s, right)


def nuclear_norm(m):
    """Sum of singular values (trace norm)."""
    m = np.asarray(m, dtype=np.float64)
    _check_finite(m)
    if m.size == 0:
        return 0.0
    # eigenvalues of [[0, M], [M^T, 0]] are +-s_i plus |p - q| zeros; unlike the
    # Gram route this keeps absolute accuracy on zero singular values
    p, q = m.shape
    aug = np.zeros((p + q, p + q))
    aug[:p, p:] = m
    aug[p:, :p] = m.T
    vals, _ = kernels.jacobi_eigh_batch(aug[None])
    return float(0.5 * np.abs(vals[0]).sum())


def default_ridge(m, rel=DEFAULT_RIDGE):
    """``rel * trace(m) / p``, the stabilising ridge applied to auto-covariances."""
    m = np.asarray(m, dtype=np.float64)
    return float(_trace_ridge(m, rel))
