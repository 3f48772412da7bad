"""Data-generating processes and the Monte Carlo replication harness."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import allocator
from .config import ExperimentConfig, StageSchedule
from .designs import DesignPolicy, oracle_problem
from .engine import run_trial
from .stats import effect_from_means

DEFAULT_T_GRID = (40, 100, 200, 300, 400)


@dataclass(frozen=True)
class DGPSpec:
    """Group proportions plus per-group, per-arm outcome distributions.

    ``gaussian`` uses ``mu`` and standard deviations ``sd``; ``bernoulli``
    uses ``mu`` as success probabilities; ``table`` takes, per arm, one list
    of ``(value, probability)`` pairs per group.
    """

    kind: str
    p: tuple[float, ...]
    mu1: tuple[float, ...] = ()
    mu0: tuple[float, ...] = ()
    sd1: tuple[float, ...] = ()
    sd0: tuple[float, ...] = ()
    table1: tuple = ()
    table0: tuple = ()

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "p", tuple(float(x) for x in self.p))
        m = len(self.p)
        if m == 0 or any(not x > 0 for x in self.p) or abs(math.fsum(self.p) - 1) > 1e-9:
            raise ValueError("group proportions must be positive and sum to 1")
        if self.kind == "table":
            t1 = tuple(tuple((float(v), float(q)) for v, q in g) for g in self.table1)
            t0 = tuple(tuple((float(v), float(q)) for v, q in g) for g in self.table0)
            if len(t1) != m or len(t0) != m:
                raise ValueError("table needs one distribution per group and arm")
            for g in t1 + t0:
                if not g or any(q < 0 for _, q in g) or abs(math.fsum(q for _, q in g) - 1) > 1e-9:
                    raise ValueError("table probabilities must be nonnegative and sum to 1")
            set_(self, "table1", t1)
            set_(self, "table0", t0)
            set_(self, "mu1", tuple(math.fsum(v * q for v, q in g) for g in t1))
            set_(self, "mu0", tuple(math.fsum(v * q for v, q in g) for g in t0))
            return
        set_(self, "mu1", tuple(float(x) for x in self.mu1))
        set_(self, "mu0", tuple(float(x) for x in self.mu0))
        if len(self.mu1) != m or len(self.mu0) != m:
            raise ValueError("need one mean per group and arm")
        if self.kind == "gaussian":
            set_(self, "sd1", tuple(float(x) for x in self.sd1))
            set_(self, "sd0", tuple(float(x) for x in self.sd0))
            if len(self.sd1) != m or len(self.sd0) != m:
                raise ValueError("need one scale per group and arm")
            if any(not s > 0 for s in self.sd1 + self.sd0):
                raise ValueError("gaussian scales must be positive")
        elif self.kind == "bernoulli":
            if any(not 0 <= x <= 1 for x in self.mu1 + self.mu0):
                raise ValueError("bernoulli means must lie in [0, 1]")
        else:
            raise ValueError(f"unknown DGP kind {self.kind!r}")

    @property
    def m(self) -> int:
        return len(self.p)

    def true_variances(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        if self.kind == "gaussian":
            return tuple(s * s for s in self.sd1), tuple(s * s for s in self.sd0)
        if self.kind == "bernoulli":
            return tuple(x * (1 - x) for x in self.mu1), tuple(x * (1 - x) for x in self.mu0)

        def var(g, mean):
            return math.fsum(q * (v - mean) ** 2 for v, q in g)

        return (
            tuple(var(g, mu) for g, mu in zip(self.table1, self.mu1)),
            tuple(var(g, mu) for g, mu in zip(self.table0, self.mu0)),
        )

    def true_group_effects(self, effect_scale: str = "mean_difference") -> list[Optional[float]]:
        return [effect_from_means(a, b, effect_scale) for a, b in zip(self.mu1, self.mu0)]

    def true_effect(self, effect_scale: str = "mean_difference") -> Optional[float]:
        a = math.fsum(p * x for p, x in zip(self.p, self.mu1))
        b = math.fsum(p * x for p, x in zip(self.p, self.mu0))
        return effect_from_means(a, b, effect_scale)

    def draw_batch(self, rng: np.random.Generator, n: int):
        cum = np.cumsum(self.p)
        groups = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), self.m - 1)
        if self.kind == "gaussian":
            z0 = rng.standard_normal(n)
            z1 = rng.standard_normal(n)
            y0 = np.asarray(self.mu0)[groups] + np.asarray(self.sd0)[groups] * z0
            y1 = np.asarray(self.mu1)[groups] + np.asarray(self.sd1)[groups] * z1
        elif self.kind == "bernoulli":
            u0 = rng.random(n)
            u1 = rng.random(n)
            y0 = (u0 < np.asarray(self.mu0)[groups]).astype(float)
            y1 = (u1 < np.asarray(self.mu1)[groups]).astype(float)
        else:
            u0 = rng.random(n)
            u1 = rng.random(n)
            y0 = np.array([_from_table(self.table0[g], u) for g, u in zip(groups, u0)])
            y1 = np.array([_from_table(self.table1[g], u) for g, u in zip(groups, u1)])
        return groups, y0, y1


def _from_table(dist, u: float) -> float:
    acc = 0.0
    for v, q in dist:
        acc += q
        if u < acc:
            return v
    return dist[-1][0]


def draw(dgp: DGPSpec, rng: np.random.Generator) -> tuple[int, float, float]:
    """One participant: group index and both potential outcomes."""
    g, y0, y1 = dgp.draw_batch(rng, 1)
    return int(g[0]), float(y0[0]), float(y1[0])


def true_group_effects(dgp: DGPSpec, effect_scale: str = "mean_difference") -> list[Optional[float]]:
    return dgp.true_group_effects(effect_scale)


DGP1 = DGPSpec(
    "gaussian", p=(0.5, 0.5), mu1=(1, 4), mu0=(4, 2), sd1=(2.5, 1.2), sd0=(1.5, 3.5)
)
DGP2 = DGPSpec(
    "bernoulli",
    p=(0.15, 0.25, 0.2, 0.25, 0.15),
    mu1=(0.6, 0.2, 0.3, 0.4, 0.1),
    mu0=(0.1, 0.5, 0.3, 0.4, 0.6),
)
BUILTIN_DGPS = {"dgp1": DGP1, "dgp2": DGP2}


def dgp_from_dict(doc: Any) -> DGPSpec:
    if isinstance(doc, str):
        try:
            return BUILTIN_DGPS[doc.lower()]
        except KeyError:
            raise ValueError(f"unknown built-in DGP {doc!r}") from None
    doc = dict(doc)
    if "builtin" in doc:
        return BUILTIN_DGPS[doc["builtin"].lower()]
    return DGPSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


def replication_seed(base_seed: int, r: int) -> np.random.SeedSequence:
    """Independent stream for replication ``r``; no state shared across replications."""
    return np.random.SeedSequence(base_seed, spawn_key=(r,))


def _replicate(job):
    cfg, dgp, policy, T_grid, first_stage, base_seed, r = job
    schedule = StageSchedule.fully_adaptive(max(T_grid), first_stage)
    try:
        res = run_trial(
            cfg, schedule, policy, dgp, replication_seed(base_seed, r),
            checkpoints=T_grid, keep_records=False,
        )
    except Exception as exc:  # noqa: BLE001 - recorded and counted, never dropped silently
        return r, None, f"{type(exc).__name__}: {exc}"
    out = {}
    for T in T_grid:
        rep = res.checkpoints[T]
        out[T] = (
            rep.estimate,
            rep.ci,
            [(g.estimate, g.ci, g.e_hat) for g in rep.groups],
        )
    return r, (out, res.max_violation, res.unconverged), None


@dataclass
class MonteCarloSummary:
    rows: list[dict[str, Any]]
    oracle_allocation: tuple[float, ...]
    failures: dict[str, list[str]] = field(default_factory=dict)
    raw: dict[tuple[str, int], list[Any]] = field(default_factory=dict)

    def cell(self, design: str, T: int, group: Any = "all") -> dict[str, Any]:
        for row in self.rows:
            if row["design"] == design and row["T"] == T and row["group"] == group:
                return row
        raise KeyError((design, T, group))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})
        return buf.getvalue()


CSV_COLUMNS = [
    "design", "T", "N", "group", "n_reps", "n_failed", "n_defined",
    "true_effect", "mean_estimate", "bias", "sd_estimate", "sd_se", "coverage",
    "treated_fraction_mean", "oracle_allocation", "alloc_abs_dev_mean",
    "alloc_max_dev_median", "max_violation", "unconverged",
]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


def _sd(xs: Sequence[float]) -> Optional[float]:
    if len(xs) < 2:
        return None
    mean = math.fsum(xs) / len(xs)
    return math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (len(xs) - 1))


def _mean(xs: Sequence[float]) -> Optional[float]:
    return math.fsum(xs) / len(xs) if xs else None


def _covers(ci, truth) -> bool:
    return ci is not None and truth is not None and ci[0] <= truth <= ci[1]


def _summarize_effect(vals, cis, truth):
    defined = [(v, c) for v, c in zip(vals, cis) if v is not None]
    xs = [v for v, _ in defined]
    sd = _sd(xs)
    mean = _mean(xs)
    return {
        "n_defined": len(xs),
        "true_effect": truth,
        "mean_estimate": mean,
        "bias": None if mean is None or truth is None else mean - truth,
        "sd_estimate": sd,
        "sd_se": None if sd is None else sd / math.sqrt(2 * (len(xs) - 1)),
        "coverage": (sum(_covers(c, truth) for _, c in defined) / len(defined)) if defined and truth is not None else None,
    }


def run_monte_carlo(
    dgp: DGPSpec,
    cfg: ExperimentConfig,
    T_grid: Sequence[int] = DEFAULT_T_GRID,
    designs: Sequence[DesignPolicy | str] = ("fair_adaptive", "complete_randomization", "dbcd"),
    R: int = 1000,
    base_seed: int = 0,
    parallelism: int = 1,
    first_stage: int = 40,
) -> MonteCarloSummary:
    """Replicate each design ``R`` times and aggregate per (design, T, group).

    One trial of ``max(T_grid)`` stages per replication is reported at every
    ``T`` in the grid; replication ``r`` always uses the stream derived from
    ``(base_seed, r)`` so results do not depend on ``parallelism``.
    """
    if R < 2:
        raise ValueError("need at least two replications")
    T_grid = tuple(sorted(set(int(T) for T in T_grid)))
    policies = [
        d if isinstance(d, DesignPolicy) else DesignPolicy(d, truth=dgp) for d in designs
    ]
    oracle = allocator.solve(oracle_problem(dgp, cfg), cfg.solver.tol, cfg.solver.max_iter).e
    true_groups = dgp.true_group_effects(cfg.effect_scale)
    true_all = dgp.true_effect(cfg.effect_scale)

    rows: list[dict[str, Any]] = []
    failures: dict[str, list[str]] = {}
    raw: dict[tuple[str, int], list[Any]] = {}
    pool = ProcessPoolExecutor(parallelism) if parallelism > 1 else None
    try:
        for policy in policies:
            jobs = [(cfg, dgp, policy, T_grid, first_stage, base_seed, r) for r in range(R)]
            if pool is None:
                results = [_replicate(j) for j in jobs]
            else:
                results = list(pool.map(_replicate, jobs, chunksize=max(1, R // (4 * parallelism))))
            results.sort(key=lambda t: t[0])
            ok = [res for _, res, err in results if err is None]
            failures[policy.kind] = [f"rep {r}: {err}" for r, _, err in results if err is not None]
            worst = max((v for _, v, _ in ok), default=0.0)
            unconv = sum(u for _, _, u in ok)
            for T in T_grid:
                reps = [o[T] for o, _, _ in ok]
                raw[(policy.kind, T)] = reps
                N = first_stage + T - 1
                base = {
                    "design": policy.kind, "T": T, "N": N,
                    "n_reps": R, "n_failed": R - len(ok),
                }
                maxdev = []
                for _, _, groups in reps:
                    devs = [abs(g[2] - o) for g, o in zip(groups, oracle) if g[2] is not None]
                    if devs:
                        maxdev.append(max(devs))
                row = dict(base, group="all")
                row.update(_summarize_effect([r[0] for r in reps], [r[1] for r in reps], true_all))
                row.update(
                    treated_fraction_mean=None,
                    oracle_allocation=None,
                    alloc_abs_dev_mean=None,
                    alloc_max_dev_median=float(np.median(maxdev)) if maxdev else None,
                    max_violation=worst,
                    unconverged=unconv,
                )
                rows.append(row)
                for j in range(dgp.m):
                    fr = [r[2][j][2] for r in reps if r[2][j][2] is not None]
                    row = dict(base, group=j)
                    row.update(_summarize_effect(
                        [r[2][j][0] for r in reps], [r[2][j][1] for r in reps], true_groups[j]
                    ))
                    row.update(
                        treated_fraction_mean=_mean(fr),
                        oracle_allocation=oracle[j],
                        alloc_abs_dev_mean=_mean([abs(x - oracle[j]) for x in fr]),
                        alloc_max_dev_median=None,
                        max_violation=None,
                        unconverged=None,
                    )
                    rows.append(row)
    finally:
        if pool is not None:
            pool.shutdown()
    return MonteCarloSummary(rows, tuple(oracle), failures, raw)
