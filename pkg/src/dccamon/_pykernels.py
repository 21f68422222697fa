"""Numpy implementations of the compiled kernels.

Each function performs the same floating-point operations as its counterpart in
``_ckernels.pyx``, vectorised across the batch instead of looped.
"""
import numpy as np

_SCAN_CHUNK = 256


def jacobi_eigh_batch(a, tol=1e-15, max_sweeps=64):
    work = np.array(a, dtype=np.float64, order="C", copy=True)
    b, p, _ = work.shape
    vecs = np.broadcast_to(np.eye(p), (b, p, p)).copy()
    if p == 0 or b == 0:
        return np.empty((b, p)), vecs
    frob = np.sum((work * work).reshape(b, -1), axis=1)
    active = frob != 0.0
    offmask = ~np.eye(p, dtype=bool)
    for _ in range(max_sweeps):
        sq = work * work
        off = np.sum(sq[:, offmask], axis=1)
        active &= ~(off <= tol * tol * frob)
        if not active.any():
            break
        rows = np.flatnonzero(active)
        sub = work[rows]
        vsub = vecs[rows]
        for i in range(p - 1):
            for j in range(i + 1, p):
                apq = sub[:, i, j]
                nz = apq != 0.0
                if not nz.any():
                    continue
                safe = np.where(nz, apq, 1.0)
                theta = (sub[:, j, j] - sub[:, i, i]) / (2.0 * safe)
                root = np.sqrt(theta * theta + 1.0)
                with np.errstate(divide="ignore"):
                    t = np.where(theta >= 0.0, 1.0 / (theta + root), -1.0 / (-theta + root))
                t = np.where(nz, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c1 = c[:, None]
                s1 = s[:, None]
                akp = sub[:, :, i].copy()
                akq = sub[:, :, j].copy()
                sub[:, :, i] = c1 * akp - s1 * akq
                sub[:, :, j] = s1 * akp + c1 * akq
                akp = sub[:, i, :].copy()
                akq = sub[:, j, :].copy()
                sub[:, i, :] = c1 * akp - s1 * akq
                sub[:, j, :] = s1 * akp + c1 * akq
                sub[:, i, j] = np.where(nz, 0.0, sub[:, i, j])
                sub[:, j, i] = np.where(nz, 0.0, sub[:, j, i])
                vkp = vsub[:, :, i].copy()
                vkq = vsub[:, :, j].copy()
                vsub[:, :, i] = c1 * vkp - s1 * vkq
                vsub[:, :, j] = s1 * vkp + c1 * vkq
        work[rows] = sub
        vecs[rows] = vsub
    vals = np.diagonal(work, axis1=1, axis2=2).copy()
    return vals, vecs


def nearest_indices(queries, library):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    lib = np.ascontiguousarray(library, dtype=np.float64)
    if lib.shape[1] != q.shape[1]:
        raise ValueError("query and library dimensions differ")
    if lib.shape[0] == 0:
        raise ValueError("empty library")
    m, d = q.shape
    idx = np.empty(m, dtype=np.int64)
    dist = np.empty(m, dtype=np.float64)
    for start in range(0, m, _SCAN_CHUNK):
        block = q[start:start + _SCAN_CHUNK]
        acc = np.zeros((block.shape[0], lib.shape[0]))
        # accumulate coordinate by coordinate to reproduce the compiled summation order
        for k in range(d):
            diff = block[:, k, None] - lib[None, :, k]
            acc += diff * diff
        best = np.argmin(acc, axis=1)
        idx[start:start + block.shape[0]] = best
        dist[start:start + block.shape[0]] = acc[np.arange(block.shape[0]), best]
    return idx, dist
