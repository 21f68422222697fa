# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: batched cyclic Jacobi eigensolver and exact nearest-neighbour scan.

Both routines mirror ``dccamon._pykernels`` operation for operation so the two
backends agree to rounding (bit-for-bit on the nearest-neighbour scan).
"""
import numpy as np

from libc.math cimport sqrt, fabs, INFINITY


cdef void _jacobi_one(double* a, double* v, Py_ssize_t p, double tol, int max_sweeps) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double frob, off, apq, theta, t, c, s, akp, akq
    for i in range(p):
        for j in range(p):
            v[i * p + j] = 1.0 if i == j else 0.0
    frob = 0.0
    for i in range(p * p):
        frob += a[i] * a[i]
    if frob == 0.0:
        return
    cdef int sweep
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(p):
            for j in range(p):
                if i != j:
                    off += a[i * p + j] * a[i * p + j]
        if off <= tol * tol * frob:
            return
        for i in range(p - 1):
            for j in range(i + 1, p):
                apq = a[i * p + j]
                if apq == 0.0:
                    continue
                theta = (a[j * p + j] - a[i * p + i]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                # A <- A P (columns i, j)
                for k in range(p):
                    akp = a[k * p + i]
                    akq = a[k * p + j]
                    a[k * p + i] = c * akp - s * akq
                    a[k * p + j] = s * akp + c * akq
                # A <- P^T A (rows i, j)
                for k in range(p):
                    akp = a[i * p + k]
                    akq = a[j * p + k]
                    a[i * p + k] = c * akp - s * akq
                    a[j * p + k] = s * akp + c * akq
                a[i * p + j] = 0.0
                a[j * p + i] = 0.0
                for k in range(p):
                    akp = v[k * p + i]
                    akq = v[k * p + j]
                    v[k * p + i] = c * akp - s * akq
                    v[k * p + j] = s * akp + c * akq


def jacobi_eigh_batch(a, double tol=1e-15, int max_sweeps=64):
    """Eigendecomposition of a stack of symmetric matrices, shape ``(B, p, p)``.

    Returns unsorted eigenvalues ``(B, p)`` and eigenvector columns ``(B, p, p)``.
    """
    cdef double[:, :, ::1] work = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t b = work.shape[0], p = work.shape[1], k, i
    vecs_arr = np.empty((b, p, p), dtype=np.float64)
    vals_arr = np.empty((b, p), dtype=np.float64)
    cdef double[:, :, ::1] vecs = vecs_arr
    cdef double[:, ::1] vals = vals_arr
    if p == 0:
        return vals_arr, vecs_arr
    with nogil:
        for k in range(b):
            _jacobi_one(&work[k, 0, 0], &vecs[k, 0, 0], p, tol, max_sweeps)
            for i in range(p):
                vals[k, i] = work[k, i, i]
    return vals_arr, vecs_arr


def nearest_indices(queries, library):
    """Exact linear scan; ties resolve to the lowest library index.

    ``queries`` is ``(m, d)``, ``library`` is ``(N, d)``. Returns the index array
    ``(m,)`` and the squared Euclidean distances ``(m,)``.
    """
    cdef double[:, ::1] q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef double[:, ::1] lib = np.ascontiguousarray(library, dtype=np.float64)
    cdef Py_ssize_t m = q.shape[0], n = lib.shape[0], d = q.shape[1]
    cdef Py_ssize_t i, j, k, best_j
    cdef double best, acc, diff
    if lib.shape[1] != d:
        raise ValueError("query and library dimensions differ")
    if n == 0:
        raise ValueError("empty library")
    idx_arr = np.empty(m, dtype=np.int64)
    dist_arr = np.empty(m, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    with nogil:
        for i in range(m):
            best = INFINITY
            best_j = 0
            for j in range(n):
                acc = 0.0
                for k in range(d):
                    diff = q[i, k] - lib[j, k]
                    acc = acc + diff * diff
                    if acc > best:
                        break
                if acc < best:
                    best = acc
                    best_j = j
            idx[i] = best_j
            dist[i] = best
    return idx_arr, dist_arr
