"""Treatment-assignment policies.

``fair_adaptive`` re-solves the constrained program on the running
estimates; ``complete_randomization`` always flips a fair coin; ``dbcd``
is the Hu-Zhang doubly adaptive biased coin steering toward the estimated
Neyman split; ``oracle_neyman`` and ``oracle_fair`` use true parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from . import allocator
from .allocator import AllocationProblem, AllocationVector
from .config import ExperimentConfig
from .stats import TrialState

KINDS = ("fair_adaptive", "complete_randomization", "dbcd", "oracle_neyman", "oracle_fair")


@dataclass(frozen=True)
class DesignPolicy:
    kind: str
    gamma: float = 2.0
    truth: Any = None  # a DGPSpec (or anything with p, true_variances, true_group_effects)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown design {self.kind!r}; expected one of {KINDS}")
        if self.kind == "dbcd" and not self.gamma >= 0:
            raise ValueError("dbcd gamma must be >= 0")

    @property
    def is_static(self) -> bool:
        return self.kind in ("complete_randomization", "oracle_neyman", "oracle_fair")


def is_active(state: TrialState, j: int, cfg: ExperimentConfig) -> bool:
    """Group ``j`` is handed to the solver once both arms have enough data."""
    for d in (0, 1):
        cell = state.cells[j][d]
        if cell.count < cfg.min_cell_count:
            return False
        v = cell.variance()
        if v is None or not math.isfinite(v):
            return False
    return True


def group_sd_variance(state: TrialState, j: int, cfg: ExperimentConfig) -> Optional[float]:
    """Running analog of the group standard error scale ``v_j`` (None if unavailable)."""
    from .engine import group_variance

    v2 = group_variance(state, j, cfg.effect_scale)
    if v2 is None or v2 <= 0:
        return None
    return math.sqrt(v2)


def welfare_slack(state: TrialState, cfg: ExperimentConfig) -> list[Optional[float]]:
    """Per-group welfare slack for the next solve.

    ``recommended`` gives ``sqrt(log N / N)`` for every group.  In
    ``t_statistic`` mode the constraint acts on ``effect / v_j``; that is the
    same as slack ``v_j * sqrt(log N / N)`` on the raw effect, so that is what
    is returned.  ``None`` marks a group whose constraint is dropped.
    """
    N = state.total_enrolled
    if N < 1:
        raise ValueError("welfare slack needs at least one enrolled participant")
    if not isinstance(cfg.delta_mode, str):
        return [float(cfg.delta_mode)] * state.m
    base = math.sqrt(math.log(N) / N)
    if cfg.delta_mode == "recommended":
        return [base] * state.m
    return [
        None if (s := group_sd_variance(state, j, cfg)) is None else base * s
        for j in range(state.m)
    ]


def build_problem(state: TrialState, cfg: ExperimentConfig) -> AllocationProblem:
    """The sample-analog program for the next stage, from history so far."""
    m = state.m
    N = state.total_enrolled
    weights, v1, v0, effects, fixed = [], [], [], [], []
    slack = welfare_slack(state, cfg)
    deltas = []
    for j in range(m):
        weights.append(state.group_counts[j] / N)
        if is_active(state, j, cfg):
            v1.append(state.cells[j][1].variance())
            v0.append(state.cells[j][0].variance())
            eff = state.group_effect(j, cfg.effect_scale)
            if slack[j] is None:
                eff = None
            effects.append(eff)
            deltas.append(slack[j] if slack[j] is not None else 0.0)
            fixed.append(False)
        else:
            v1.append(0.0)
            v0.append(0.0)
            effects.append(None)
            deltas.append(0.0)
            fixed.append(True)
    return AllocationProblem(
        tuple(weights), tuple(v1), tuple(v0), tuple(effects),
        tuple(deltas), cfg.c1, cfg.c2, tuple(fixed),
    )


def dbcd_allocation(x: float, rho: float, gamma: float) -> float:
    """Hu-Zhang allocation function ``g(x, rho)``."""
    if gamma == 0:
        return rho
    a = rho * (rho / x) ** gamma
    b = (1 - rho) * ((1 - rho) / (1 - x)) ** gamma
    return a / (a + b)


def _clip(x: float, c2: float) -> float:
    return min(max(x, c2), 1 - c2)


def oracle_problem(truth: Any, cfg: ExperimentConfig) -> AllocationProblem:
    var1, var0 = truth.true_variances()
    effects = truth.true_group_effects(cfg.effect_scale)
    return AllocationProblem(tuple(truth.p), var1, var0, tuple(effects), 0.0, cfg.c1, cfg.c2)


def plan(
    policy: DesignPolicy, state: TrialState, cfg: ExperimentConfig
) -> tuple[AllocationVector, Optional[AllocationProblem]]:
    """Allocation for the next stage plus the program it came from (if any)."""
    m = state.m
    kind = policy.kind
    if kind == "complete_randomization":
        return AllocationVector((0.5,) * m), None
    if kind in ("oracle_neyman", "oracle_fair"):
        if policy.truth is None:
            raise ValueError(f"{kind} needs true DGP parameters")
        if kind == "oracle_fair":
            prob = oracle_problem(policy.truth, cfg)
            return allocator.solve(prob, cfg.solver.tol, cfg.solver.max_iter), prob
        var1, var0 = policy.truth.true_variances()
        e = tuple(_clip(allocator.neyman(math.sqrt(a), math.sqrt(b)), cfg.c2) for a, b in zip(var1, var0))
        return AllocationVector(e), None
    if kind == "dbcd":
        e = []
        for j in range(m):
            if not is_active(state, j, cfg):
                e.append(0.5)
                continue
            rho = allocator.neyman(
                math.sqrt(state.cells[j][1].variance()), math.sqrt(state.cells[j][0].variance())
            )
            x = state.realized_fraction(j)
            e.append(_clip(dbcd_allocation(x, rho, policy.gamma), cfg.c2))
        return AllocationVector(tuple(e)), None
    prob = build_problem(state, cfg)
    return allocator.solve(prob, cfg.solver.tol, cfg.solver.max_iter), prob


def assignment_probabilities(
    policy: DesignPolicy, state: TrialState, cfg: ExperimentConfig
) -> AllocationVector:
    return plan(policy, state, cfg)[0]


def policy_from_dict(doc: dict, truth: Any = None) -> DesignPolicy:
    doc = dict(doc)
    kind = doc.pop("kind")
    gamma = float(doc.pop("gamma", 2.0))
    if doc:
        raise ValueError(f"unknown design keys {sorted(doc)}")
    return DesignPolicy(kind, gamma, truth)


def neyman_targets(var1: Sequence[float], var0: Sequence[float]) -> list[float]:
    return [allocator.neyman(math.sqrt(a), math.sqrt(b)) for a, b in zip(var1, var0)]
