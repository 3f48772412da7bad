import json
import subprocess
import sys
from pathlib import Path

import pytest

from fairadapt.cli import EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_OK, config_digest, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(*argv):
    return main([str(a) for a in argv])


def test_solve_dgp1_oracle(tmp_path):
    assert run("solve", "--config", CONFIGS / "dgp1_oracle_solve.toml", "--out-dir", tmp_path) == EXIT_OK
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["e"] == pytest.approx([0.5, 0.5], abs=1e-6)
    assert sol["converged"] is True
    assert set(sol) >= {"objective", "active_constraints", "violations", "iterations"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "solve"
    assert str(tmp_path / "solution.json") in manifest["outputs"]


def test_solve_single_group(tmp_path):
    assert run("solve", "--config", CONFIGS / "single_group_problem.json", "--out-dir", tmp_path) == EXIT_OK
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["e"][0] == pytest.approx(0.625, abs=1e-8)


def test_malformed_file_writes_nothing(tmp_path, capsys):
    bad = write(tmp_path, "bad.toml", "dgp = [unclosed\n")
    out = tmp_path / "out"
    assert run("solve", "--config", bad, "--out-dir", out) == EXIT_CONFIG
    assert not (out / "solution.json").exists()
    assert "config error" in capsys.readouterr().err


def test_invalid_field_reports_field(tmp_path, capsys):
    bad = write(tmp_path, "c.toml", 'dgp = "dgp1"\n[experiment]\nc2 = 0.7\nc1 = 1.5\n')
    assert run("validate", "--config", bad) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "c2" in err and "c1" in err


def test_unknown_key_rejected(tmp_path):
    bad = write(tmp_path, "c.json", json.dumps({"dgp": "dgp1", "experiment": {"cc": 1}}))
    assert run("validate", "--config", bad) == EXIT_CONFIG


def test_validate_ok(capsys):
    assert run("validate", "--config", CONFIGS / "dgp1_trial.toml") == EXIT_OK
    assert capsys.readouterr().out.strip() == "ok"


def test_missing_file_and_bad_usage(tmp_path):
    assert run("solve", "--config", tmp_path / "nope.toml") == EXIT_CONFIG
    assert run("frobnicate") == EXIT_CONFIG


def test_nonconvergence_exit_code_keeps_best_iterate(tmp_path):
    doc = {
        "problem": {"weights": [0.5, 0.5], "var1": [16.0, 0.1], "var0": [0.1, 16.0], "delta": 0.0},
        "experiment": {"c1": 0.5, "c2": 0.05, "solver": {"max_iter": 1}},
    }
    p = write(tmp_path, "p.json", json.dumps(doc))
    assert run("solve", "--config", p, "--out-dir", tmp_path) == EXIT_NONCONVERGED
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["converged"] is False and len(sol["e"]) == 2


def test_trial_outputs(tmp_path):
    assert run("trial", "--config", CONFIGS / "dgp1_trial.toml", "--out-dir", tmp_path) == EXIT_OK
    lines = (tmp_path / "stages.jsonl").read_text().splitlines()
    assert len(lines) == 400
    assert json.loads(lines[0])["allocation"] == [0.5, 0.5]
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["N"] == 439
    assert len(rep["groups"]) == 2
    assert all(g["ci"] is not None for g in rep["groups"]) and rep["ci"] is not None


def test_trial_single_stage_report(tmp_path):
    cfg = write(tmp_path, "t.toml", 'dgp = "dgp1"\nseed = 1\n[schedule]\nn = [50]\n')
    assert run("trial", "--config", cfg, "--out-dir", tmp_path) == EXIT_OK
    stage = json.loads((tmp_path / "stages.jsonl").read_text())
    rep = json.loads((tmp_path / "report.json").read_text())
    for j in range(2):
        y1 = [p["outcome"] for p in stage["participants"] if p["group"] == j and p["treated"]]
        y0 = [p["outcome"] for p in stage["participants"] if p["group"] == j and not p["treated"]]
        assert rep["groups"][j]["estimate"] == pytest.approx(sum(y1) / len(y1) - sum(y0) / len(y0))


def _outputs(d):
    return {n: (d / n).read_bytes() for n in ("stages.jsonl", "report.json", "summary.csv") if (d / n).exists()}


def test_trial_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("trial", "--config", CONFIGS / "dgp1_trial.toml", "--out-dir", d, "--seed", 3) == EXIT_OK
    assert _outputs(a) == _outputs(b)
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_digest"] == mb["config_digest"] and ma["seed"] == 3


def test_seed_flag_overrides_document(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("trial", "--config", CONFIGS / "dgp1_trial.toml", "--out-dir", a)
    run("trial", "--config", CONFIGS / "dgp1_trial.toml", "--out-dir", b, "--seed", 8)
    assert _outputs(a) != _outputs(b)


def smoke_mc(tmp_path):
    return write(
        tmp_path, "mc.toml",
        'dgp = "dgp1"\n[montecarlo]\nR = 10\nT_grid = [10, 30]\nbase_seed = 5\nfirst_stage = 20\n',
    )


def test_montecarlo_smoke_and_parallel_identity(tmp_path):
    cfg = smoke_mc(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("montecarlo", "--config", cfg, "--out-dir", a) == EXIT_OK
    assert run("montecarlo", "--config", cfg, "--out-dir", b) == EXIT_OK
    assert run("montecarlo", "--config", cfg, "--out-dir", c, "--parallelism", 2) == EXIT_OK
    rows = (a / "summary.csv").read_text().strip().split("\n")[1:]
    assert len([r for r in rows if ",all," in r]) == 3 * 2
    assert _outputs(a) == _outputs(b) == _outputs(c)


def test_env_out_dir_and_flag_override(tmp_path, monkeypatch):
    env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv("FAIRADAPT_OUT_DIR", str(env_dir))
    assert run("solve", "--config", CONFIGS / "single_group_problem.json") == EXIT_OK
    assert (env_dir / "solution.json").exists()
    assert run("solve", "--config", CONFIGS / "single_group_problem.json", "--out-dir", flag_dir) == EXIT_OK
    assert (flag_dir / "solution.json").exists()


def test_digest_is_canonical():
    assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "fairadapt", "solve", "--config", str(CONFIGS / "single_group_problem.json"),
         "--out-dir", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "solution.json").exists()
