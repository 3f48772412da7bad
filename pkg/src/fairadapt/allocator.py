"""Fairness- and welfare-constrained variance minimization over allocation vectors.

The program solved here is::

    minimize    sum_j w_j * (var1_j / e_j + var0_j / (1 - e_j))
    subject to  |e_j - e_l| <= c1                  (envy-freeness)
                log(e_j / (1 - e_j)) * effect_j >= -delta   (welfare)
                c2 <= e_j <= 1 - c2                (feasibility)

With true parameters and ``delta = 0`` this is the oracle program; with
sample estimates and a positive slack it is the adaptive one.  The hot loop
lives in ``_solver`` (compiled) or ``_solver_py`` (fallback), selected at
import time.  Set ``FAIRADAPT_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import _solver_py

if os.environ.get("FAIRADAPT_PURE_PYTHON"):
    _kernel = _solver_py
else:
    try:
        from . import _solver as _kernel  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        _kernel = _solver_py

BACKEND = "python" if _kernel is _solver_py else "compiled"


@dataclass(frozen=True)
class AllocationProblem:
    weights: tuple[float, ...]
    var1: tuple[float, ...]
    var0: tuple[float, ...]
    effects: tuple[Optional[float], ...] = ()
    delta: Union[float, tuple[float, ...]] = 0.0  # scalar or one slack per group
    c1: float = 0.2
    c2: float = 0.1
    fixed_half: tuple[bool, ...] = ()

    def __post_init__(self):
        m = len(self.weights)
        set_ = object.__setattr__
        set_(self, "weights", tuple(float(x) for x in self.weights))
        set_(self, "var1", tuple(float(x) for x in self.var1))
        set_(self, "var0", tuple(float(x) for x in self.var0))
        set_(self, "effects", tuple(self.effects) if self.effects else (None,) * m)
        set_(self, "fixed_half", tuple(bool(b) for b in self.fixed_half) if self.fixed_half else (False,) * m)
        if not (len(self.var1) == len(self.var0) == len(self.effects) == len(self.fixed_half) == m):
            raise ValueError("all per-group fields must have the same length")
        if m == 0:
            raise ValueError("need at least one group")
        for name in ("weights", "var1", "var0"):
            vals = getattr(self, name)
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be finite")
            if any(v < 0 for v in vals):
                raise ValueError(f"{name} must be nonnegative")
        for eff in self.effects:
            if eff is not None and not math.isfinite(eff):
                raise ValueError("effects must be finite or None")
        if isinstance(self.delta, (int, float)):
            set_(self, "delta", float(self.delta))
        else:
            set_(self, "delta", tuple(float(d) for d in self.delta))
            if len(self.delta) != m:
                raise ValueError("per-group delta must have one entry per group")
        if not all(math.isfinite(d) and d >= 0 for d in self.deltas):
            raise ValueError("delta must be finite and >= 0")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0,1)")
        if not 0 < self.c2 < 0.5:
            raise ValueError("c2 must lie in (0, 1/2)")

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def deltas(self) -> tuple[float, ...]:
        if isinstance(self.delta, tuple):
            return self.delta
        return (self.delta,) * len(self.weights)

    def pinned(self) -> list[bool]:
        """Groups held at exactly 1/2: flagged, or flat objective (both variances zero)."""
        return [
            f or (a == 0.0 and b == 0.0)
            for f, a, b in zip(self.fixed_half, self.var1, self.var0)
        ]


@dataclass(frozen=True)
class AllocationVector:
    e: tuple[float, ...]
    objective: float = float("nan")
    converged: bool = True
    iterations: int = 0

    def __len__(self):
        return len(self.e)

    def __iter__(self):
        return iter(self.e)

    def __getitem__(self, j):
        return self.e[j]


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def derive_welfare_box(effect: Optional[float], delta: float, c2: float) -> tuple[float, float]:
    """Interval of ``e`` allowed by the welfare and feasibility constraints."""
    lo, hi = 0.0, 1.0
    if effect is not None and effect > 0:
        lo = logistic(-delta / effect)
    elif effect is not None and effect < 0:
        hi = logistic(-delta / effect)
    return max(lo, c2), min(hi, 1.0 - c2)


def objective(problem: AllocationProblem, e: Sequence[float]) -> float:
    total = 0.0
    for w, a, b, x in zip(problem.weights, problem.var1, problem.var0, e):
        t = 0.0
        if a > 0:
            t += a / x if x > 0 else math.inf
        if b > 0:
            t += b / (1.0 - x) if x < 1 else math.inf
        total += w * t
    return total


def _boxes(problem: AllocationProblem) -> tuple[list[bool], list[float], list[float]]:
    pinned = problem.pinned()
    lo, hi = [], []
    anchor = any(pinned) and problem.m > 1
    for j in range(problem.m):
        a, b = derive_welfare_box(problem.effects[j], problem.deltas[j], problem.c2)
        if anchor:
            # active groups must stay within c1 of the pinned 1/2
            a = max(a, 0.5 - problem.c1)
            b = min(b, 0.5 + problem.c1)
        lo.append(a)
        hi.append(b)
    return pinned, lo, hi


def solve(problem: AllocationProblem, tol: float = 1e-10, max_iter: int = 10_000) -> AllocationVector:
    """Minimize the weighted variance over the constraint polytope.

    Projected gradient descent from the all-1/2 point, projecting with
    Dykstra's algorithm.  A run that hits ``max_iter`` returns its best
    iterate with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    pinned, lo, hi = _boxes(problem)
    active = [j for j in range(problem.m) if not pinned[j]]
    e = [0.5] * problem.m
    its, ok = 0, True
    if active:
        x, its, ok = _kernel.pgd_solve(
            [problem.weights[j] for j in active],
            [problem.var1[j] for j in active],
            [problem.var0[j] for j in active],
            [lo[j] for j in active],
            [hi[j] for j in active],
            problem.c1,
            tol,
            max_iter,
        )
        for j, v in zip(active, x):
            e[j] = v
    return AllocationVector(tuple(e), objective(problem, e), bool(ok), int(its))


def violations(problem: AllocationProblem, e: Sequence[float]) -> dict[str, float]:
    """Largest violation of each constraint class (0 when satisfied)."""
    out = {"feasibility": 0.0, "welfare": 0.0, "envy": 0.0, "fixed_half": 0.0}
    pinned = problem.pinned()
    for j, x in enumerate(e):
        out["feasibility"] = max(out["feasibility"], problem.c2 - x, x - (1 - problem.c2))
        eff = problem.effects[j]
        if eff is not None and eff != 0 and not pinned[j]:
            # compare on the probability scale; the log-odds form blows up near 0/1
            lo, hi = derive_welfare_box(eff, problem.deltas[j], 0.0)
            out["welfare"] = max(out["welfare"], lo - x, x - hi)
        if pinned[j]:
            out["fixed_half"] = max(out["fixed_half"], abs(x - 0.5))
    if len(e):
        out["envy"] = max(0.0, max(e) - min(e) - problem.c1)
    return out


def max_violation(problem: AllocationProblem, e: Sequence[float]) -> float:
    return max(violations(problem, e).values())


def active_constraints(problem: AllocationProblem, e: Sequence[float], tol: float = 1e-7) -> list[str]:
    """Human-readable list of constraints binding at ``e``."""
    out = []
    pinned = problem.pinned()
    for j, x in enumerate(e):
        if pinned[j]:
            out.append(f"fixed_half[{j}]")
            continue
        if abs(x - problem.c2) <= tol:
            out.append(f"feasibility_lower[{j}]")
        if abs(x - (1 - problem.c2)) <= tol:
            out.append(f"feasibility_upper[{j}]")
        eff = problem.effects[j]
        if eff is not None and eff != 0:
            lo, hi = derive_welfare_box(eff, problem.deltas[j], 0.0)
            if eff > 0 and abs(x - lo) <= tol:
                out.append(f"welfare[{j}]")
            if eff < 0 and abs(x - hi) <= tol:
                out.append(f"welfare[{j}]")
    for j in range(len(e)):
        for k in range(j + 1, len(e)):
            if abs(abs(e[j] - e[k]) - problem.c1) <= tol:
                out.append(f"envy[{j},{k}]")
    return out


def grid_oracle(problem: AllocationProblem, step: float) -> AllocationVector:
    """Exact minimum of the objective over the feasible points of a uniform grid.

    The grid is ``{c2, c2 + step, ..., 1 - c2}`` per free coordinate; pinned
    groups sit at 1/2.  Because the objective is separable and the envy
    constraints only bound ``max(e) - min(e)``, the grid minimum is found by
    sweeping the lowest grid value ``a`` and minimizing each coordinate over
    ``[a, a + c1]``.  This is exact for the grid, with cost
    ``O(m * G**2)`` rather than ``O(G**m)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    c1, c2 = problem.c1, problem.c2
    eps = 1e-12
    n = int(math.floor((1 - 2 * c2) / step + 1e-9))
    grid = c2 + step * np.arange(n + 1)
    pinned, _, _ = _boxes(problem)
    boxes = [derive_welfare_box(problem.effects[j], problem.deltas[j], c2) for j in range(problem.m)]
    free = [j for j in range(problem.m) if not pinned[j]]
    e = [0.5] * problem.m
    if not free:
        return AllocationVector(tuple(e), objective(problem, e))

    with np.errstate(divide="ignore", invalid="ignore"):
        costs = []
        for j in free:
            lo, hi = boxes[j]
            f = problem.weights[j] * (problem.var1[j] / grid + problem.var0[j] / (1 - grid))
            f = np.where((grid >= lo - eps) & (grid <= hi + eps), f, np.inf)
            costs.append(f)

    # window [a, a + c1] with a a grid point (the smallest coordinate)
    lows = grid[:, None]
    inwin = (grid[None, :] >= lows - eps) & (grid[None, :] <= lows + c1 + eps)
    if any(pinned):
        ok = (lows[:, 0] <= 0.5 + eps) & (lows[:, 0] + c1 >= 0.5 - eps)
        inwin &= ok[:, None]
    best_total = np.zeros(len(grid))
    best_idx = []
    for f in costs:
        mat = np.where(inwin, f[None, :], np.inf)
        idx = np.argmin(mat, axis=1)
        best_idx.append(idx)
        best_total = best_total + mat[np.arange(len(grid)), idx]
    a = int(np.argmin(best_total))
    if not math.isfinite(best_total[a]):
        raise RuntimeError("no feasible grid point; refine the step")
    for j, idx in zip(free, best_idx):
        e[j] = float(grid[idx[a]])
    return AllocationVector(tuple(e), objective(problem, e))


def brute_force_grid(problem: AllocationProblem, step: float) -> AllocationVector:
    """Plain enumeration of the full grid product; only for tiny grids."""
    import itertools

    c2 = problem.c2
    n = int(math.floor((1 - 2 * c2) / step + 1e-9))
    grid = [c2 + step * k for k in range(n + 1)]
    pinned = problem.pinned()
    axes = [[0.5] if pinned[j] else grid for j in range(problem.m)]
    best, best_e = math.inf, None
    for e in itertools.product(*axes):
        if max_violation(problem, e) > 1e-12:
            continue
        f = objective(problem, e)
        if f < best:
            best, best_e = f, e
    if best_e is None:
        raise RuntimeError("no feasible grid point")
    return AllocationVector(tuple(best_e), best)


def neyman(sd1: float, sd0: float) -> float:
    """Variance-minimizing treated share for one group; 1/2 when both SDs vanish."""
    if sd1 + sd0 == 0:
        return 0.5
    return sd1 / (sd1 + sd0)
