"""Time the compiled and pure-Python solver kernels on the same problems.

    python3 benchmarks/bench_solver.py [--problems 200] [--m 2 5 10]
"""

import argparse
import random
import time

from fairadapt import _solver_py
from fairadapt.allocator import AllocationProblem, _boxes

try:
    from fairadapt import _solver
except ImportError:
    _solver = None


def make_problems(m, count, seed):
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        w = [rng.random() + 0.05 for _ in range(m)]
        p = AllocationProblem(
            weights=tuple(x / sum(w) for x in w),
            var1=tuple(rng.uniform(0.1, 16) for _ in range(m)),
            var0=tuple(rng.uniform(0.1, 16) for _ in range(m)),
            effects=tuple(rng.uniform(-4, 4) for _ in range(m)),
            delta=0.2,
            c1=0.2,
            c2=0.1,
        )
        _, lo, hi = _boxes(p)
        out.append((list(p.weights), list(p.var1), list(p.var0), lo, hi, p.c1))
    return out


def bench(kernel, problems, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for w, v1, v0, lo, hi, c1 in problems:
            kernel.pgd_solve(w, v1, v0, lo, hi, c1, 1e-10, 10000)
        best = min(best, time.perf_counter() - t0)
    return best / len(problems)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problems", type=int, default=200)
    ap.add_argument("--m", type=int, nargs="+", default=[2, 5, 10])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _solver is None:
        print("compiled kernel not built; only the fallback is timed")
    print(f"{'m':>3} {'python us':>11} {'compiled us':>12} {'speedup':>8} {'max |de|':>9}")
    for m in args.m:
        probs = make_problems(m, args.problems, seed=m)
        t_py = bench(_solver_py, probs, args.repeat)
        if _solver is None:
            print(f"{m:>3} {t_py * 1e6:>11.1f} {'-':>12} {'-':>8} {'-':>9}")
            continue
        t_c = bench(_solver, probs, args.repeat)
        diff = max(
            abs(a - b)
            for p in probs
            for a, b in zip(_solver_py.pgd_solve(*p, 1e-10, 10000)[0], _solver.pgd_solve(*p, 1e-10, 10000)[0])
        )
        print(f"{m:>3} {t_py * 1e6:>11.1f} {t_c * 1e6:>12.1f} {t_py / t_c:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
