import math

import numpy as np
import pytest

from fairadapt.allocator import max_violation
from fairadapt.config import ExperimentConfig, Participant, StageSchedule
from fairadapt.designs import DesignPolicy
from fairadapt.engine import finalize_inference, group_variance, run_trial
from fairadapt.sim import DGP1, DGP2, DGPSpec
from fairadapt.stats import TrialState, batch_stats


def hand_report(participants, m, alpha=0.05):
    """Direct evaluation of the end-of-trial formulas on raw data."""
    z = 1.959963984540054 if alpha == 0.05 else None
    N = len(participants)
    taus, v2s, ps = [], [], []
    for j in range(m):
        ys1 = [p.outcome for p in participants if p.group_index == j and p.treated]
        ys0 = [p.outcome for p in participants if p.group_index == j and not p.treated]
        _, m1, s1 = batch_stats(ys1)
        _, m0, s0 = batch_stats(ys0)
        n = len(ys1) + len(ys0)
        p, e = n / N, len(ys1) / n
        taus.append(m1 - m0)
        v2s.append((s1 / e + s0 / (1 - e)) / p)
        ps.append(p)
    tau = sum(p * t for p, t in zip(ps, taus))
    v2 = sum(p * p * v for p, v in zip(ps, v2s)) + sum(p * (t - tau) ** 2 for p, t in zip(ps, taus))
    return taus, v2s, tau, v2, z


def test_single_stage_matches_hand_computation(cfg):
    res = run_trial(cfg, StageSchedule((200,)), DesignPolicy("fair_adaptive"), DGP1, 3)
    batch = res.records[0].participants
    assert res.records[0].allocation == (0.5, 0.5)
    taus, v2s, tau, v2, z = hand_report(batch, 2)
    rep = res.report
    for g, t, v in zip(rep.groups, taus, v2s):
        assert g.estimate == pytest.approx(t, rel=1e-12)
        assert g.variance == pytest.approx(v, rel=1e-12)
        assert g.ci == pytest.approx((t - z * math.sqrt(v / 200), t + z * math.sqrt(v / 200)), rel=1e-12)
    assert rep.estimate == pytest.approx(tau, rel=1e-12)
    assert rep.variance == pytest.approx(v2, rel=1e-12)


def test_single_stage_same_as_complete_randomization(cfg):
    a = run_trial(cfg, StageSchedule((120,)), DesignPolicy("fair_adaptive"), DGP1, 9)
    b = run_trial(cfg, StageSchedule((120,)), DesignPolicy("complete_randomization"), DGP1, 9)
    assert a.report == b.report


def test_fully_adaptive_schedule_size(cfg):
    res = run_trial(cfg, StageSchedule.fully_adaptive(400), DesignPolicy("fair_adaptive"), DGP1, 0)
    assert res.report.N == 439
    assert len(res.records) == 400
    assert sum(r.problem is not None for r in res.records) == 399
    assert len(res.report.groups) == 2 and res.report.ci is not None
    assert all(g.ci is not None for g in res.report.groups)


def test_same_seed_same_records(cfg):
    sched = StageSchedule.fully_adaptive(80)
    a = run_trial(cfg, sched, DesignPolicy("fair_adaptive"), DGP1, 5)
    b = run_trial(cfg, sched, DesignPolicy("fair_adaptive"), DGP1, 5)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]
    assert a.report == b.report


def test_non_anticipative(cfg):
    """Allocation at stage t depends only on stages before t."""
    full = run_trial(cfg, StageSchedule.fully_adaptive(120), DesignPolicy("fair_adaptive"), DGP1, 21)
    for t in (2, 17, 60, 120):
        short = run_trial(cfg, StageSchedule.fully_adaptive(t), DesignPolicy("fair_adaptive"), DGP1, 21)
        assert short.records[-1].allocation == full.records[t - 1].allocation


def test_checkpoint_reports_equal_truncated_runs(cfg):
    full = run_trial(
        cfg, StageSchedule.fully_adaptive(150), DesignPolicy("dbcd"), DGP1, 4, checkpoints=(50, 100)
    )
    for T in (50, 100):
        short = run_trial(cfg, StageSchedule.fully_adaptive(T), DesignPolicy("dbcd"), DGP1, 4)
        assert full.checkpoints[T] == short.report


def test_recorded_allocations_satisfy_program(cfg):
    res = run_trial(cfg, StageSchedule.fully_adaptive(300), DesignPolicy("fair_adaptive"), DGP1, 8)
    for rec in res.records[1:]:
        assert max_violation(rec.problem, rec.allocation) <= 1e-8
    assert res.max_violation <= 1e-8
    assert res.unconverged == 0


def test_stage_snapshot_matches_state(cfg):
    res = run_trial(cfg, StageSchedule.fully_adaptive(30), DesignPolicy("fair_adaptive"), DGP1, 1)
    s = TrialState(2)
    for rec in res.records:
        s.update(rec.participants)
        assert rec.effects == [s.group_effect(j) for j in range(2)]
        assert rec.proportions == [s.group_proportion(j) for j in range(2)]


def test_mismatched_source_rejected():
    with pytest.raises(ValueError):
        run_trial(ExperimentConfig(m=3), StageSchedule((10,)), DesignPolicy("fair_adaptive"), DGP1, 0)


# -- finalize_inference -------------------------------------------------------

def state_from(rows, m):
    return TrialState(m).update([Participant(*r) for r in rows])


def test_single_group_variance():
    s = state_from([(0, True, 1.0), (0, True, -1.0), (0, False, 1.0), (0, False, -1.0)], 1)
    rep = finalize_inference(s, ExperimentConfig(m=1))
    assert rep.groups[0].variance == pytest.approx(4.0)
    assert rep.variance == pytest.approx(4.0)


def test_ci_halfwidth_arithmetic():
    # v = 2 and N = 400 give a halfwidth of 1.96 * 2 / 20
    rows = [(0, i % 2 == 0, 2.0 if (i // 2) % 2 else -2.0) for i in range(400)]
    s = state_from(rows, 1)
    rep = finalize_inference(s, ExperimentConfig(m=1))
    assert rep.variance == pytest.approx(16.0)  # sigma^2 = 4 per arm, e = 1/2
    s2 = state_from([(0, i % 2 == 0, 1.0 if (i // 2) % 2 else -1.0) for i in range(400)], 1)
    rep2 = finalize_inference(s2, ExperimentConfig(m=1))
    assert math.sqrt(rep2.variance) == pytest.approx(2.0)
    half = (rep2.ci[1] - rep2.ci[0]) / 2
    assert half == pytest.approx(0.196, abs=1e-4)
    assert (rep2.ci[0] + rep2.ci[1]) / 2 == pytest.approx(rep2.estimate)


def test_between_group_term():
    rows = [(0, True, 3.0), (0, True, 5.0), (0, False, 1.0), (0, False, 2.0),
            (1, True, 0.0), (1, True, 1.0), (1, False, 4.0), (1, False, 6.0)]
    rep = finalize_inference(state_from(rows, 2), ExperimentConfig())
    within = sum(g.p_hat**2 * g.variance for g in rep.groups)
    between = sum(g.p_hat * (g.estimate - rep.estimate) ** 2 for g in rep.groups)
    assert between > 0
    assert rep.variance == pytest.approx(within + between)
    assert rep.variance > within


def test_realized_fraction_not_solver_output(cfg):
    res = run_trial(cfg, StageSchedule.fully_adaptive(100), DesignPolicy("fair_adaptive"), DGP1, 2)
    for g in res.report.groups:
        assert g.e_hat == g.n_treated / g.n


def test_empty_arm_and_unobserved_groups_are_flagged():
    rows = [(0, True, 1.0), (0, False, 0.0), (0, True, 2.0), (1, True, 3.0)]
    rep = finalize_inference(state_from(rows, 3), ExperimentConfig(m=3))
    assert rep.groups[1].flag == "empty_arm" and rep.groups[1].ci is None
    assert rep.groups[2].flag == "not_observed"
    assert rep.estimate == pytest.approx(rep.groups[0].estimate)
    assert rep.flags


def test_log_scale_group_estimates_and_variance():
    rows = [(0, True, 1.0)] * 6 + [(0, True, 0.0)] * 4 + [(0, False, 1.0)] * 2 + [(0, False, 0.0)] * 8
    s = state_from(rows, 1)
    cfg = ExperimentConfig(m=1, effect_scale="log_relative_risk")
    rep = finalize_inference(s, cfg)
    g = rep.groups[0]
    assert g.estimate == pytest.approx(math.log(0.6 / 0.2))
    # delta method: var(p)/p^2 per arm, e = 1/2, p_hat = 1
    expect = (0.24 / (0.5 * 0.36)) + (0.16 / (0.5 * 0.04))
    assert g.variance == pytest.approx(expect)
    assert rep.estimate == pytest.approx(g.estimate)


def test_log_scale_zero_mean_group_is_undefined_but_pooled():
    rows = [(0, True, 1.0), (0, True, 0.0), (0, False, 0.0), (0, False, 0.0),
            (1, True, 1.0), (1, True, 0.0), (1, False, 1.0), (1, False, 1.0)]
    rep = finalize_inference(state_from(rows, 2), ExperimentConfig(effect_scale="log_relative_risk"))
    assert rep.groups[0].estimate is None and rep.groups[0].flag == "undefined_effect"
    assert rep.estimate == pytest.approx(math.log(0.5 / 0.5))


def test_log_rr_standard_error_matches_bootstrap():
    """Delta-method SE of the pooled and group log-RR against a resampling oracle."""
    rng = np.random.default_rng(0)
    N = 4000
    dgp = DGP2
    g, y0, y1 = dgp.draw_batch(rng, N)
    d = rng.random(N) < 0.5
    y = np.where(d, y1, y0)
    cfg = ExperimentConfig(m=5, effect_scale="log_relative_risk")
    s = TrialState(5).update([Participant(int(a), bool(b), float(c)) for a, b, c in zip(g, d, y)])
    rep = finalize_inference(s, cfg)

    def pooled(gi, di, yi):
        p = np.bincount(gi, minlength=5) / len(gi)
        m1 = np.array([yi[(gi == j) & di].mean() for j in range(5)])
        m0 = np.array([yi[(gi == j) & ~di].mean() for j in range(5)])
        return np.log(p @ m1) - np.log(p @ m0), np.log(m1[3]) - np.log(m0[3])

    boots = []
    for _ in range(600):
        idx = rng.integers(0, N, N)
        boots.append(pooled(g[idx], d[idx], y[idx]))
    boots = np.array(boots)
    assert rep.estimate == pytest.approx(pooled(g, d, y)[0], rel=1e-10)
    se_delta = math.sqrt(rep.variance / N)
    assert se_delta == pytest.approx(boots[:, 0].std(ddof=1), rel=0.1)
    se_group = math.sqrt(rep.groups[3].variance / N)
    assert se_group == pytest.approx(boots[:, 1].std(ddof=1), rel=0.1)


def test_group_variance_undefined_cases():
    s = state_from([(0, True, 1.0)], 1)
    assert group_variance(s, 0, "mean_difference") is None
    s = state_from([(0, True, 0.0), (0, False, 1.0)], 1)
    assert group_variance(s, 0, "log_relative_risk") is None


def test_complete_randomization_variance_is_consistent(cfg):
    """Mean of v^2/N tracks the Monte Carlo variance of the estimate (within 10%)."""
    sched = StageSchedule.fully_adaptive(400)
    ests, v2n = [], []
    for r in range(500):
        rep = run_trial(cfg, sched, DesignPolicy("complete_randomization"), DGP1, 10_000 + r,
                        keep_records=False).report
        ests.append(rep.estimate)
        v2n.append(rep.variance / rep.N)
    mc_var = float(np.var(ests, ddof=1))
    assert np.mean(v2n) == pytest.approx(mc_var, rel=0.1)


def test_table_dgp_runs(cfg):
    dgp = DGPSpec("table", p=(0.4, 0.6),
                  table1=[[(0, 0.5), (2, 0.5)], [(1, 1.0)]],
                  table0=[[(0, 0.8), (5, 0.2)], [(0, 0.5), (1, 0.5)]])
    res = run_trial(cfg, StageSchedule.fully_adaptive(60, 20), DesignPolicy("fair_adaptive"), dgp, 0)
    assert res.report.N == 79
