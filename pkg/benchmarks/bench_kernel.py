"""Compiled vs pure-Python MLP kernel: wall time per realisation and parity.

    python benchmarks/bench_kernel.py [--reps 3]
"""
import argparse
import time

import numpy as np

from mlpell import DiffusionMatrix, Nonlinearity, Problem, compiled_available, mlp_replicate
from mlpell.oracle import ManufacturedSpec, manufacture

CASES = [
    ("affine d=1 n=3 M=4", lambda: Problem.build(DiffusionMatrix.scaled_identity(1.0, 1),
                                                  Nonlinearity.affine(0.5, 1.0), 2.0), 4, 3),
    ("bump d=5 n=3 M=5", lambda: manufacture(ManufacturedSpec(), DiffusionMatrix.scaled_identity(1.0, 5),
                                             10.0), 5, 3),
    ("cosine d=20 n=2 M=10", lambda: manufacture(ManufacturedSpec("cosine-mean", psi_scale=0.1),
                                                 DiffusionMatrix.scaled_identity(1.0, 20), 10.0), 10, 2),
]


def timed(p, M, n, K, backend, reps):
    best = float("inf")
    vals = None
    for _ in range(reps):
        t0 = time.perf_counter()
        res = mlp_replicate(p, M, n, np.zeros(p.d), K, 0, backend=backend)
        best = min(best, time.perf_counter() - t0)
        vals = [r.value for r in res]
    return best / K, vals


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--K", type=int, default=4)
    args = ap.parse_args()
    if not compiled_available():
        print("compiled kernel not built; only the Python timings are shown")
    print(f"{'case':<24}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}  parity")
    for name, make, M, n in CASES:
        p = make()
        t_py, v_py = timed(p, M, n, args.K, "python", args.reps)
        if compiled_available():
            t_c, v_c = timed(p, M, n, args.K, "compiled", args.reps)
            same = "bit-identical" if v_py == v_c else "MISMATCH"
            print(f"{name:<24}{t_py * 1e3:>12.2f}{t_c * 1e3:>14.3f}{t_py / t_c:>10.0f}  {same}")
        else:
            print(f"{name:<24}{t_py * 1e3:>12.2f}{'-':>14}{'-':>10}  -")


if __name__ == "__main__":
    main()
