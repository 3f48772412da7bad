"""Streaming per-(group, arm) sample statistics.

Every estimate that can be undefined (empty arm, nonpositive mean on the
log scale, no enrollment yet) is returned as ``None``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .config import Participant


@dataclass
class GroupArmStats:
    """Count, running mean and sum of squared deviations (Welford)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, y: float) -> None:
        self.count += 1
        d = y - self.mean
        self.mean += d / self.count
        self.m2 += d * (y - self.mean)

    def variance(self) -> Optional[float]:
        # population divisor, as in the group-arm variance estimator
        if self.count == 0:
            return None
        return max(self.m2, 0.0) / self.count

    def copy(self) -> "GroupArmStats":
        return GroupArmStats(self.count, self.mean, self.m2)


@dataclass
class TrialState:
    m: int
    cells: list[list[GroupArmStats]] = field(default_factory=list)
    stage: int = 0

    def __post_init__(self):
        if not self.cells:
            self.cells = [[GroupArmStats(), GroupArmStats()] for _ in range(self.m)]

    # cells[j][0] is control, cells[j][1] is treated

    @property
    def group_counts(self) -> list[int]:
        return [c[0].count + c[1].count for c in self.cells]

    @property
    def treated_counts(self) -> list[int]:
        return [c[1].count for c in self.cells]

    @property
    def total_enrolled(self) -> int:
        return sum(self.group_counts)

    def update(self, batch: Iterable[Participant]) -> "TrialState":
        """Fold a batch into the state. A bad group index rejects the whole batch."""
        batch = list(batch)
        for p in batch:
            if not (0 <= p.group_index < self.m):
                raise IndexError(f"group_index {p.group_index} outside [0, {self.m})")
            if not math.isfinite(p.outcome):
                raise ValueError(f"non-finite outcome {p.outcome!r}")
        for p in batch:
            self.cells[p.group_index][1 if p.treated else 0].push(float(p.outcome))
        return self

    def copy(self) -> "TrialState":
        return TrialState(self.m, [[a.copy(), b.copy()] for a, b in self.cells], self.stage)

    def arm_mean(self, j: int, d: int) -> Optional[float]:
        c = self.cells[j][d]
        return c.mean if c.count else None

    def arm_variance(self, j: int, d: int) -> Optional[float]:
        return self.cells[j][d].variance()

    def group_effect(self, j: int, effect_scale: str = "mean_difference") -> Optional[float]:
        return group_effect(self, j, effect_scale)

    def group_proportion(self, j: int) -> Optional[float]:
        return group_proportion(self, j)

    def realized_fraction(self, j: int) -> Optional[float]:
        """Treated share of everyone enrolled so far in group ``j``."""
        n = self.cells[j][0].count + self.cells[j][1].count
        return self.cells[j][1].count / n if n else None


def update(state: TrialState, batch: Iterable[Participant]) -> TrialState:
    return state.update(batch)


def effect_from_means(y1: Optional[float], y0: Optional[float], effect_scale: str) -> Optional[float]:
    if y1 is None or y0 is None:
        return None
    if effect_scale == "mean_difference":
        return y1 - y0
    if effect_scale == "log_relative_risk":
        if y1 <= 0 or y0 <= 0:
            return None
        return math.log(y1) - math.log(y0)
    raise ValueError(f"unknown effect scale {effect_scale!r}")


def group_effect(state: TrialState, j: int, effect_scale: str = "mean_difference") -> Optional[float]:
    return effect_from_means(state.arm_mean(j, 1), state.arm_mean(j, 0), effect_scale)


def group_proportion(state: TrialState, j: int) -> Optional[float]:
    total = state.total_enrolled
    if total == 0:
        return None
    return state.group_counts[j] / total


def batch_stats(ys: Iterable[float]) -> tuple[int, Optional[float], Optional[float]]:
    """Two-pass (count, mean, population variance) straight from the definitions."""
    ys = list(ys)
    n = len(ys)
    if n == 0:
        return 0, None, None
    mean = math.fsum(ys) / n
    return n, mean, math.fsum((y - mean) ** 2 for y in ys) / n
