"""Command-line entry points.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
3 solver non-convergence.  ``FAIRADAPT_OUT_DIR`` sets the default output
directory; ``--out-dir`` overrides it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from . import __version__, allocator
from .allocator import AllocationProblem
from .config import ConfigError, ExperimentConfig, StageSchedule, config_from_dict, read_document
from .designs import DesignPolicy, oracle_problem, policy_from_dict
from .engine import run_trial
from .sim import DEFAULT_T_GRID, dgp_from_dict, run_monte_carlo

log = logging.getLogger("fairadapt")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NONCONVERGED = 0, 1, 2, 3
OUT_DIR_ENV = "FAIRADAPT_OUT_DIR"


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: Optional[int]
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    tool_version: str = __version__
    backend: str = allocator.BACKEND
    config: dict[str, Any] = field(default_factory=dict)

    def write(self, out_dir: Path) -> None:
        self.finished = _now()
        (out_dir / "manifest.json").write_text(json.dumps(self.__dict__, indent=2) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def config_digest(doc: dict[str, Any]) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# document resolution
# --------------------------------------------------------------------------


def _experiment(doc: dict[str, Any], m_hint: Optional[int] = None) -> ExperimentConfig:
    section = dict(doc.get("experiment", {}))
    if m_hint is not None:
        section.setdefault("m", m_hint)
        if section["m"] != m_hint:
            raise ConfigError("experiment.m does not match the DGP", [f"m={section['m']} but DGP has {m_hint} groups"])
    return config_from_dict(section)


def _dgp(doc: dict[str, Any]):
    if "dgp" not in doc:
        raise ConfigError("missing [dgp] section", ["dgp: required"])
    try:
        return dgp_from_dict(doc["dgp"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid dgp: {exc}", [f"dgp: {exc}"]) from exc


def _schedule(doc: dict[str, Any]) -> StageSchedule:
    sec = doc.get("schedule", {})
    try:
        if "n" in sec:
            return StageSchedule(tuple(sec["n"]))
        return StageSchedule.fully_adaptive(int(sec.get("T", 400)), int(sec.get("first_stage", 40)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid schedule: {exc}", [f"schedule: {exc}"]) from exc


def _policy(sec: Any, truth) -> DesignPolicy:
    try:
        if isinstance(sec, str):
            return DesignPolicy(sec, truth=truth)
        return policy_from_dict(sec, truth)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid design: {exc}", [f"design: {exc}"]) from exc


def _problem(doc: dict[str, Any]) -> tuple[AllocationProblem, ExperimentConfig]:
    if "problem" in doc:
        sec = dict(doc["problem"])
        m = len(sec.get("weights", []))
        cfg = _experiment({"experiment": {**doc.get("experiment", {})}}, m_hint=m or None)
        sec.setdefault("c1", cfg.c1)
        sec.setdefault("c2", cfg.c2)
        if "effects" in sec:
            sec["effects"] = tuple(sec["effects"])
        if isinstance(sec.get("delta"), list):
            sec["delta"] = tuple(sec["delta"])
        try:
            return AllocationProblem(**sec), cfg
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid problem: {exc}", [f"problem: {exc}"]) from exc
    if "dgp" in doc:
        dgp = _dgp(doc)
        cfg = _experiment(doc, dgp.m)
        return oracle_problem(dgp, cfg), cfg
    raise ConfigError("need a [problem] or [dgp] section", ["problem: required"])


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    doc = read_document(args.config)
    m = None
    if "dgp" in doc:
        m = _dgp(doc).m
    _experiment(doc, m)
    print("ok")
    return EXIT_OK


def cmd_solve(args) -> int:
    doc = read_document(args.config)
    problem, cfg = _problem(doc)
    out_dir = _out_dir(args)
    manifest = RunManifest("solve", config_digest(doc), None, _now(), config=doc)
    sol = allocator.solve(problem, cfg.solver.tol, cfg.solver.max_iter)
    result = {
        "e": list(sol.e),
        "objective": sol.objective,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "active_constraints": allocator.active_constraints(problem, sol.e),
        "violations": allocator.violations(problem, sol.e),
    }
    path = out_dir / "solution.json"
    path.write_text(_dump(result))
    manifest.outputs.append(str(path))
    manifest.write(out_dir)
    log.info("solution e=%s objective=%.6g", sol.e, sol.objective)
    if not sol.converged:
        log.error("solver hit the iteration cap; best iterate written")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_trial(args) -> int:
    doc = read_document(args.config)
    dgp = _dgp(doc)
    cfg = _experiment(doc, dgp.m)
    schedule = _schedule(doc)
    policy = _policy(doc.get("design", "fair_adaptive"), dgp)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    out_dir = _out_dir(args)
    manifest = RunManifest("trial", config_digest(doc), seed, _now(), config=doc)
    res = run_trial(cfg, schedule, policy, dgp, seed)
    stages = out_dir / "stages.jsonl"
    with stages.open("w") as fh:
        for rec in res.records:
            fh.write(json.dumps(rec.to_dict(), allow_nan=False) + "\n")
    report = out_dir / "report.json"
    report.write_text(_dump(res.report.to_dict()))
    manifest.outputs += [str(stages), str(report)]
    manifest.write(out_dir)
    if res.unconverged:
        log.error("%d stage solves did not converge", res.unconverged)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    doc = read_document(args.config)
    dgp = _dgp(doc)
    cfg = _experiment(doc, dgp.m)
    mc = doc.get("montecarlo", {})
    designs = [_policy(d, dgp) for d in mc.get("designs", ["fair_adaptive", "complete_randomization", "dbcd"])]
    seed = args.seed if args.seed is not None else int(mc.get("base_seed", 0))
    R = int(mc.get("R", 1000))
    T_grid = tuple(mc.get("T_grid", DEFAULT_T_GRID))
    if R < 2:
        raise ConfigError("montecarlo.R must be >= 2", ["montecarlo.R: must be >= 2"])
    out_dir = _out_dir(args)
    manifest = RunManifest("montecarlo", config_digest(doc), seed, _now(), config=doc)
    summary = run_monte_carlo(
        dgp, cfg, T_grid, designs, R, seed,
        parallelism=args.parallelism, first_stage=int(mc.get("first_stage", 40)),
    )
    path = out_dir / "summary.csv"
    path.write_text(summary.to_csv())
    manifest.outputs.append(str(path))
    n_failed = sum(len(v) for v in summary.failures.values())
    if n_failed:
        fpath = out_dir / "failures.json"
        fpath.write_text(_dump(summary.failures))
        manifest.outputs.append(str(fpath))
        log.warning("%d replications failed; see %s", n_failed, fpath)
    manifest.write(out_dir)
    unconverged = sum(r["unconverged"] or 0 for r in summary.rows if r["group"] == "all")
    if unconverged:
        log.error("%d stage solves did not converge", unconverged)
        return EXIT_NONCONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, parallel=False):
        p.add_argument("--config", required=True, help="JSON or TOML document")
        p.add_argument("--out-dir", default=None)
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if parallel:
            p.add_argument("--parallelism", type=int, default=1)
        return p

    common(sub.add_parser("validate", help="check a config document")).set_defaults(func=cmd_validate)
    common(sub.add_parser("solve", help="solve one allocation problem")).set_defaults(func=cmd_solve)
    common(sub.add_parser("trial", help="run one experiment"), seed=True).set_defaults(func=cmd_trial)
    common(
        sub.add_parser("montecarlo", help="replicate designs and summarize"), seed=True, parallel=True
    ).set_defaults(func=cmd_montecarlo)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
