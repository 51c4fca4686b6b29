"""Time the compiled and numpy Kalman kernels on identical inputs.

Usage: python3 benchmarks/bench_kernels.py [--steps 500] [--sequences 100] [--r 2] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from gpmm import _kalman_py

try:
    from gpmm import _kalman_ext
except ImportError:
    _kalman_ext = None


def make_inputs(steps, sequences, r, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((3 * r, r))
    c_mat = v.T @ v
    w = rng.uniform(0.2, 0.9, r)
    lam_eps = 1.0 - w ** 2
    a_mats = rng.standard_normal((steps, r, r)) * 0.3
    d_mats = rng.standard_normal((steps, r, r)) * 0.3
    j_mats = rng.standard_normal((steps - 1, r, r)) * 0.3
    b_vecs = rng.standard_normal((sequences, steps, r))
    return (c_mat, w, lam_eps, steps), (a_mats, b_vecs, d_mats, j_mats)


def bench(module, cov_args, mean_args, repeat):
    cov = min(timeit.repeat(lambda: module.covariance_pass(*cov_args), number=1, repeat=repeat))
    mean = min(timeit.repeat(lambda: module.mean_pass(*mean_args), number=1, repeat=repeat))
    return cov, mean


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--sequences", type=int, default=100)
    ap.add_argument("--r", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    cov_args, mean_args = make_inputs(args.steps, args.sequences, args.r)
    backends = [("python", _kalman_py)]
    if _kalman_ext is not None:
        backends.append(("cython", _kalman_ext))
    else:
        print("compiled extension not built; timing the numpy backend only")
    ref = None
    print(f"steps={args.steps} sequences={args.sequences} r={args.r} (best of {args.repeat})")
    print(f"{'backend':<8} {'covariance_pass [ms]':>21} {'mean_pass [ms]':>15} {'max |diff|':>11}")
    for name, mod in backends:
        cov, mean = bench(mod, cov_args, mean_args, args.repeat)
        out = mod.covariance_pass(*cov_args) + mod.mean_pass(*mean_args)
        diff = 0.0 if ref is None else max(float(np.max(np.abs(a - b))) for a, b in zip(out, ref))
        ref = ref or out
        print(f"{name:<8} {cov * 1e3:>21.3f} {mean * 1e3:>15.3f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
