"""The sequential experiment loop and end-of-trial inference."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Any, Iterable, Optional, Protocol

import numpy as np

from . import allocator
from .allocator import AllocationProblem, AllocationVector
from .config import ExperimentConfig, Participant, StageSchedule
from .designs import DesignPolicy, plan
from .stats import TrialState


class OutcomeSource(Protocol):
    m: int

    def draw_batch(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return group indices, control outcomes and treated outcomes for ``n`` units."""


@dataclass
class StageRecord:
    stage: int
    allocation: tuple[float, ...]
    participants: list[Participant]
    effects: Optional[list[Optional[float]]] = None
    variances: Optional[list[tuple[Optional[float], Optional[float]]]] = None
    proportions: Optional[list[Optional[float]]] = None
    problem: Optional[AllocationProblem] = None
    converged: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "allocation": list(self.allocation),
            "participants": [
                {"group": p.group_index, "treated": int(p.treated), "outcome": p.outcome}
                for p in self.participants
            ],
            "effects": self.effects,
            "variances": [list(v) for v in self.variances] if self.variances is not None else None,
            "proportions": self.proportions,
            "converged": self.converged,
        }


@dataclass
class GroupInference:
    group: int
    n: int
    n_treated: int
    p_hat: float
    e_hat: Optional[float]
    estimate: Optional[float]
    variance: Optional[float]
    ci: Optional[tuple[float, float]]
    flag: Optional[str] = None


@dataclass
class InferenceReport:
    N: int
    alpha: float
    effect_scale: str
    groups: list[GroupInference]
    estimate: Optional[float]
    variance: Optional[float]
    ci: Optional[tuple[float, float]]
    flags: list[str] = field(default_factory=list)

    @property
    def e_hat(self) -> list[Optional[float]]:
        return [g.e_hat for g in self.groups]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for g in d["groups"]:
            g["ci"] = list(g["ci"]) if g["ci"] is not None else None
        d["ci"] = list(self.ci) if self.ci is not None else None
        return d


@dataclass
class TrialResult:
    records: list[StageRecord]
    report: InferenceReport
    checkpoints: dict[int, InferenceReport]
    max_violation: float = 0.0
    unconverged: int = 0


def _z(alpha: float) -> float:
    return NormalDist().inv_cdf(1 - alpha / 2)


def group_variance(state: TrialState, j: int, effect_scale: str) -> Optional[float]:
    """Per-group variance scale ``v_j^2`` on the requested effect scale.

    Uses the realized treated share of group ``j``.  ``None`` when an arm is
    empty, or on the log scale when an arm mean is not positive.
    """
    c0, c1 = state.cells[j]
    n = c0.count + c1.count
    N = state.total_enrolled
    if c0.count == 0 or c1.count == 0:
        return None
    p = n / N
    e = c1.count / n
    s1, s0 = c1.variance(), c0.variance()
    if effect_scale == "mean_difference":
        return (s1 / e + s0 / (1 - e)) / p
    if c1.mean <= 0 or c0.mean <= 0:
        return None
    # delta method for log(mean1) - log(mean0)
    return (s1 / (e * c1.mean**2) + s0 / ((1 - e) * c0.mean**2)) / p


def finalize_inference(state: TrialState, cfg: ExperimentConfig) -> InferenceReport:
    """Group and overall estimates, variance scales and confidence intervals.

    Intervals are ``estimate +/- z * v / sqrt(N)`` where ``N`` is the total
    enrollment and ``v_j^2`` already carries the ``1/p_j`` factor.
    """
    N = state.total_enrolled
    scale = cfg.effect_scale
    z = _z(cfg.alpha)
    root_n = math.sqrt(N) if N else math.nan
    groups, flags = [], []
    for j in range(state.m):
        c0, c1 = state.cells[j]
        n = c0.count + c1.count
        if n == 0:
            groups.append(GroupInference(j, 0, 0, 0.0, None, None, None, None, "not_observed"))
            flags.append(f"group {j} never observed")
            continue
        e_hat = c1.count / n
        est = state.group_effect(j, scale)
        v2 = group_variance(state, j, scale)
        flag = None
        ci = None
        if c0.count == 0 or c1.count == 0:
            flag = "empty_arm"
            est = None
            v2 = None
        elif est is None or v2 is None:
            flag = "undefined_effect"
            est = v2 = None
        else:
            half = z * math.sqrt(v2) / root_n
            ci = (est - half, est + half)
        if flag:
            flags.append(f"group {j}: {flag}")
        groups.append(GroupInference(j, n, c1.count, n / N, e_hat, est, v2, ci, flag))

    # the pooled log-RR only needs both arms populated, not a defined group log-RR
    usable = [g for g in groups if g.n and g.flag != "empty_arm"]
    estimate = variance = ci = None
    if usable:
        w_total = sum(g.n for g in usable)
        if w_total != N:
            flags.append("overall estimate reweighted over groups with both arms observed")
        w = [g.n / w_total for g in usable]
        if scale == "mean_difference":
            estimate = math.fsum(wj * g.estimate for wj, g in zip(w, usable))
            variance = math.fsum(wj * wj * g.variance for wj, g in zip(w, usable)) + math.fsum(
                wj * (g.estimate - estimate) ** 2 for wj, g in zip(w, usable)
            )
        else:
            estimate, variance = _overall_log_rr(state, [g.group for g in usable], w)
        if estimate is not None:
            half = z * math.sqrt(variance) / root_n
            ci = (estimate - half, estimate + half)
    return InferenceReport(N, cfg.alpha, scale, groups, estimate, variance, ci, flags)


def _overall_log_rr(state: TrialState, idx: list[int], w: list[float]):
    """Plug-in pooled log relative risk and its delta-method variance scale."""
    m1 = [state.cells[j][1].mean for j in idx]
    m0 = [state.cells[j][0].mean for j in idx]
    a = math.fsum(wj * x for wj, x in zip(w, m1))
    b = math.fsum(wj * x for wj, x in zip(w, m0))
    if a <= 0 or b <= 0:
        return None, None
    var = 0.0
    between = 0.0
    for wj, j, y1, y0 in zip(w, idx, m1, m0):
        c0, c1 = state.cells[j]
        e = c1.count / (c0.count + c1.count)
        var += wj * (c1.variance() / (e * a * a) + c0.variance() / ((1 - e) * b * b))
        between += wj * (y1 / a - y0 / b) ** 2
    return math.log(a) - math.log(b), var + between


def _snapshot(state: TrialState, scale: str):
    m = state.m
    return (
        [state.group_effect(j, scale) for j in range(m)],
        [(state.arm_variance(j, 1), state.arm_variance(j, 0)) for j in range(m)],
        [state.group_proportion(j) for j in range(m)],
    )


def run_trial(
    cfg: ExperimentConfig,
    schedule: StageSchedule,
    policy: DesignPolicy,
    source: OutcomeSource,
    rng_seed: Any = 0,
    checkpoints: Iterable[int] = (),
    keep_records: bool = True,
) -> TrialResult:
    """Run every stage of one experiment.

    Stage 1 assigns with probability 1/2 in every group.  Each later stage
    asks the policy for an allocation computed from the state after the
    previous stage, flips an independent coin per participant, reveals the
    matching potential outcome and folds the batch into the state.

    ``checkpoints`` lists stage counts ``T' <= T`` at which an extra report
    is produced; because allocations never look ahead, the report at ``T'``
    equals that of a separate run truncated to ``T'`` stages with the same
    seed.
    """
    if source.m != cfg.m:
        raise ValueError(f"outcome source has {source.m} groups, config says {cfg.m}")
    rng = np.random.default_rng(rng_seed)
    state = TrialState(cfg.m)
    want = set(checkpoints)
    reports: dict[int, InferenceReport] = {}
    records: list[StageRecord] = []
    worst = 0.0
    unconverged = 0
    half = AllocationVector((0.5,) * cfg.m)
    static = None
    for t, n_t in enumerate(schedule.n, start=1):
        problem = None
        if t == 1:
            alloc = half
        elif policy.is_static:
            if static is None:
                static = plan(policy, state, cfg)
            alloc, problem = static
        else:
            alloc, problem = plan(policy, state, cfg)
        if not alloc.converged:
            unconverged += 1
        if problem is not None:
            worst = max(worst, allocator.max_violation(problem, alloc.e))
        groups, y0, y1 = source.draw_batch(rng, n_t)
        coins = rng.random(n_t)
        batch = []
        for g, a, b, u in zip(groups.tolist(), y0.tolist(), y1.tolist(), coins.tolist()):
            d = u < alloc.e[g]
            batch.append(Participant(g, d, b if d else a))
        state.update(batch)
        state.stage = t
        if keep_records:
            eff, var, prop = _snapshot(state, cfg.effect_scale)
            records.append(StageRecord(t, alloc.e, batch, eff, var, prop, problem, alloc.converged))
        if t in want:
            reports[t] = finalize_inference(state, cfg)
    report = finalize_inference(state, cfg)
    reports[schedule.T] = report
    return TrialResult(records, report, reports, worst, unconverged)
