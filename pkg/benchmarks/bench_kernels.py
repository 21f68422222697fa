"""Time the compiled kernels against the numpy fallback and check they agree.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from dccamon import _pykernels

try:
    from dccamon import _ckernels
except ImportError:
    _ckernels = None


def eig_inputs(batch, p, seed=0):
    a = np.random.default_rng(seed).standard_normal((batch, p, p))
    return a + a.transpose(0, 2, 1)


def nn_inputs(m, n, d, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, d)), rng.standard_normal((n, d))


CASES = [
    ("jacobi_eigh_batch 2000 x 6x6", "jacobi_eigh_batch", lambda: (eig_inputs(2000, 6),)),
    ("jacobi_eigh_batch 200 x 16x16", "jacobi_eigh_batch", lambda: (eig_inputs(200, 16),)),
    ("nearest_indices 2000 q / 4000 lib, d=16", "nearest_indices", lambda: nn_inputs(2000, 4000, 16)),
    ("nearest_indices 200 q / 4000 lib, d=1024", "nearest_indices", lambda: nn_inputs(200, 4000, 1024)),
]


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; only the numpy fallback is available")
    print(f"{'case':45s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s}  agree")
    for label, name, make in CASES:
        inputs = make()
        py_fn = getattr(_pykernels, name)
        t_py = best_time(py_fn, inputs, args.repeat)
        if _ckernels is None:
            print(f"{label:45s} {t_py:11.4f} {'-':>13s} {'-':>8s}  -")
            continue
        c_fn = getattr(_ckernels, name)
        t_c = best_time(c_fn, inputs, args.repeat)
        agree = all(np.array_equal(a, b) for a, b in zip(py_fn(*inputs), c_fn(*inputs)))
        print(f"{label:45s} {t_py:11.4f} {t_c:13.4f} {t_py / t_c:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
