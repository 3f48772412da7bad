"""Experiment configuration, stage schedules and config-document loading."""

from __future__ import annotations

import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

DELTA_MODES = ("recommended", "t_statistic")
EFFECT_SCALES = ("mean_difference", "log_relative_risk")

DeltaMode = Union[str, float]


class ConfigError(ValueError):
    """Raised when a config document cannot be parsed or fails validation."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 10_000


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs shared by every design and by the allocation solver.

    ``delta_mode`` is ``"recommended"``, ``"t_statistic"`` or a nonnegative
    float used as a constant welfare slack.
    """

    m: int = 2
    c1: float = 0.2
    c2: float = 0.1
    alpha: float = 0.05
    delta_mode: DeltaMode = "recommended"
    effect_scale: str = "mean_difference"
    min_cell_count: int = 2
    solver: SolverOptions = field(default_factory=SolverOptions)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _is_real(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_config(cfg: ExperimentConfig) -> ValidationResult:
    """Check every bound; problems are returned, never raised."""
    out = []
    if not isinstance(cfg.m, int) or isinstance(cfg.m, bool) or cfg.m < 1:
        out.append("m must be an integer >= 1")
    if not (_is_real(cfg.c1) and 0 < cfg.c1 < 1):
        out.append("c1 must lie in (0,1)")
    if not (_is_real(cfg.c2) and 0 < cfg.c2 < 0.5):
        out.append("c2 must lie in (0, 1/2)")
    if not (_is_real(cfg.alpha) and 0 < cfg.alpha < 1):
        out.append("alpha must lie in (0,1)")
    dm = cfg.delta_mode
    if isinstance(dm, str):
        if dm not in DELTA_MODES:
            out.append(f"delta_mode must be one of {DELTA_MODES} or a nonnegative number")
    elif not (_is_real(dm) and dm >= 0):
        out.append("delta_mode must be one of ('recommended', 't_statistic') or a nonnegative number")
    if cfg.effect_scale not in EFFECT_SCALES:
        out.append(f"effect_scale must be one of {EFFECT_SCALES}")
    if not isinstance(cfg.min_cell_count, int) or cfg.min_cell_count < 2:
        out.append("min_cell_count must be an integer >= 2")
    if not (_is_real(cfg.solver.tol) and cfg.solver.tol > 0):
        out.append("solver.tol must be positive")
    if not isinstance(cfg.solver.max_iter, int) or cfg.solver.max_iter < 1:
        out.append("solver.max_iter must be a positive integer")
    return ValidationResult(tuple(out))


@dataclass(frozen=True)
class StageSchedule:
    """Per-stage enrollment counts ``n_t``."""

    n: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(k) for k in self.n))
        if not self.n:
            raise ValueError("schedule needs at least one stage")
        if any(k < 1 for k in self.n):
            raise ValueError("every stage must enroll at least one participant")

    @classmethod
    def fully_adaptive(cls, T: int, first: int = 40) -> "StageSchedule":
        """``first`` participants in stage 1, then one per stage up to ``T`` stages."""
        if T < 1:
            raise ValueError("T must be >= 1")
        return cls((first,) + (1,) * (T - 1))

    @property
    def T(self) -> int:
        return len(self.n)

    @property
    def N(self) -> int:
        return sum(self.n)

    def prefix(self, T: int) -> "StageSchedule":
        return StageSchedule(self.n[:T])


@dataclass(frozen=True)
class Participant:
    """One enrolled unit; ``group_index`` is zero-based."""

    group_index: int
    treated: bool
    outcome: float


# --------------------------------------------------------------------------
# Config documents
# --------------------------------------------------------------------------

_CFG_KEYS = {f for f in ExperimentConfig.__dataclass_fields__}


def read_document(path: str | Path) -> dict[str, Any]:
    """Parse a JSON or TOML document, chosen by file suffix."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def config_from_dict(doc: dict[str, Any]) -> ExperimentConfig:
    """Build a validated ExperimentConfig from the ``experiment`` table of a document."""
    if not isinstance(doc, dict):
        raise ConfigError("experiment section must be a table")
    unknown = set(doc) - _CFG_KEYS
    if unknown:
        raise ConfigError("unknown experiment keys", [f"unknown key {k!r}" for k in sorted(unknown)])
    kw = dict(doc)
    solver = kw.pop("solver", None) or {}
    try:
        kw["solver"] = SolverOptions(**solver)
        cfg = ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc), [str(exc)]) from exc
    res = validate_config(cfg)
    if not res.ok:
        raise ConfigError("invalid experiment config", list(res.violations))
    return cfg
