"""Compare the compiled and pure-Python integration kernels.

Runs the 33-run one-at-a-time design over the three drop cases with each
kernel, checks that the depths agree bit for bit and reports the timings.

    python3 benchmarks/bench_solver.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rpclay import dataset, solver
from rpclay.constitutive import MaterialParams


def run(kernel: str, mats, repeat: int) -> tuple[float, np.ndarray]:
    best = float("inf")
    depths = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        depths = np.array([[solver.simulate(c, m, kernel=kernel).depth for c in solver.DEFAULT_CASES]
                           for m in mats])
        best = min(best, time.perf_counter() - t0)
    return best, depths


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="best-of repetitions per kernel")
    args = ap.parse_args()

    mats = dataset.gen_oat_design(MaterialParams())
    n = len(mats) * len(solver.DEFAULT_CASES)
    if solver.BACKEND != "cython":
        print("compiled kernel not available; build with `pip install -e . --no-build-isolation`")
        return
    t_py, d_py = run("python", mats, args.repeat)
    t_cy, d_cy = run("cython", mats, args.repeat)
    print(f"{n} simulations, dt = {solver.SolverConfig().dt:g} s, best of {args.repeat}")
    print(f"  python : {t_py:8.3f} s  ({1e3 * t_py / n:7.3f} ms / run)")
    print(f"  cython : {t_cy:8.3f} s  ({1e3 * t_cy / n:7.3f} ms / run)")
    print(f"  speedup: {t_py / t_cy:6.1f}x")
    print(f"  identical depths: {bool(np.array_equal(d_py, d_cy))}")


if __name__ == "__main__":
    main()
