"""Time the compiled BCD kernel against the numpy fallback.

Usage: python benchmarks/bench_bcd.py [--problems 200] [--repeat 3]
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import random_problem  # noqa: E402

from exel.solver import SolverConfig, lambda_max, solve  # noqa: E402
from exel.solver import _backend  # noqa: E402


def run(kernel, problems, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        sols = [solve(p, SolverConfig(0.3 * lambda_max(p)), kernel=kernel) for p in problems]
        best = min(best, time.perf_counter() - start)
    return best, sols


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problems", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--large", action="store_true", help="use d in [64,256], n in [16,64]")
    args = ap.parse_args()
    kw = {"d_range": (64, 256), "n_range": (16, 64)} if args.large else {}
    problems = [random_problem(s, **kw) for s in range(args.problems)]

    py_time, py_sols = run(_backend.python_kernel, problems, args.repeat)
    print(f"python  {py_time:8.3f}s")
    if _backend.compiled_kernel is None:
        print("cython  unavailable (extension not built)")
        return
    cy_time, cy_sols = run(_backend.compiled_kernel, problems, args.repeat)
    gap = max(float(np.max(np.abs(a.alpha - b.alpha))) for a, b in zip(py_sols, cy_sols))
    print(f"cython  {cy_time:8.3f}s")
    print(f"speedup {py_time / cy_time:8.1f}x   max |alpha diff| {gap:.2e}")


if __name__ == "__main__":
    main()
