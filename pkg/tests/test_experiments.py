"""Tests for ladder experiments: statistics, slow-path replay, reports."""

import dataclasses
import json
import math

import numpy as np
import pytest

from test_queue import _policy_runs, cs_dual_setup, make_ss, ss_dual_setup

from pss_lab import des
from pss_lab.des import PolicySpec, RunConfig, run, select_policy
from pss_lab.distributions import ErlangK, Exponential, Hyperexp2Balanced, Lognormal
from pss_lab.errors import (
    ConfigError,
    PolicyCaseMismatch,
    ReplayMismatch,
    TailBoundExceeded,
)
from pss_lab.experiments import (
    LadderConfig,
    ao_experiment,
    default_distributions,
    ks_statistic,
    mode_fidelity,
    rbar_statistic,
    replay_statistics,
    ssc_statistic,
    verify_replay,
    worker_count,
)
from pss_lab.lp import analyze_lp
from pss_lab.scaling import ScalingPolicy
from pss_lab.wcp import solve_wcp


def _scaling(n):
    return ScalingPolicy(n=n, m_moment=4.5, a_bar=0.37)


def _pp_setup():
    """Loaded server-switched dual instance with its solved switching point."""
    params, lp, da, ds = ss_dual_setup()
    sol = solve_wcp(params, lp)
    pol = select_policy(lp, sol.case, zstar=sol.hjb.zstar)
    assert pol.name == "PP"
    return params, lp, sol, da, ds, pol


def _pp_record(n=64, horizon=5.0, seed=2024, rep=0, **kw):
    params, lp, sol, da, ds, pol = _pp_setup()
    cfg = RunConfig(
        params=params, n=n, arrival_dists=da, service_dists=ds,
        scaling=_scaling(n), policy=pol, horizon=horizon, seed=seed, rep=rep, **kw
    )
    return run(cfg), lp, sol


# ----------------------------------------------------------------------------
# worker count


class TestWorkerCount:
    def test_default_is_one(self, monkeypatch):
        monkeypatch.delenv("HTS_THREADS", raising=False)
        assert worker_count() == 1
        monkeypatch.setenv("HTS_THREADS", "  ")
        assert worker_count() == 1

    def test_env_caps_workers(self, monkeypatch):
        monkeypatch.setenv("HTS_THREADS", "4")
        assert worker_count() == 4
        monkeypatch.setenv("HTS_THREADS", "0")
        assert worker_count() == 1

    def test_garbage_rejected(self, monkeypatch):
        monkeypatch.setenv("HTS_THREADS", "many")
        with pytest.raises(ConfigError, match="HTS_THREADS"):
            worker_count()


# ----------------------------------------------------------------------------
# per-record statistics


class TestSscStatistic:
    def test_zero_arrivals_never_excurse(self):
        recs = [
            _pp_record(horizon=2.0, seed=3, rep=r, arrival_cap=0)[0] for r in range(3)
        ]
        assert ssc_statistic(recs, _scaling(64), p=1) == (0.0, 0.0)

    def test_matches_manual_count(self):
        recs = [_pp_record(n=16, horizon=3.0, seed=7, rep=r)[0] for r in range(8)]
        scal = _scaling(16)
        frac, se = ssc_statistic(recs, scal, p=1)
        hits = sum(r.sup_X[1] >= 2 * scal.theta_n for r in recs)
        assert frac == hits / 8
        assert se == pytest.approx(math.sqrt(frac * (1 - frac) / 8), abs=0.0)
        assert 0.0 <= frac <= 1.0

    def test_validation(self):
        rec, _, _ = _pp_record(n=16, horizon=2.0, seed=1)
        with pytest.raises(ValueError, match="at least one"):
            ssc_statistic([], _scaling(16), p=0)
        with pytest.raises(ValueError, match="p must be"):
            ssc_statistic([rec], _scaling(16), p=2)
        with pytest.raises(ValueError, match="different threshold"):
            ssc_statistic([rec], _scaling(64), p=0)


class TestRbarStatistic:
    def test_scales_raw_integral(self):
        rec, lp, _ = _pp_record(n=16, horizon=3.0, seed=5)
        assert rbar_statistic(rec, lp) == math.sqrt(16) * rec.rbar_raw

    def test_zero_without_band_excursions(self):
        rec, lp, _ = _pp_record(horizon=2.0, seed=3, arrival_cap=0)
        assert rbar_statistic(rec, lp) == 0.0

    def test_rejects_foreign_lp(self):
        rec, _, _ = _pp_record(n=16, horizon=2.0, seed=5)
        _, lp_cs, _, _ = cs_dual_setup()
        with pytest.raises(ValueError, match="does not describe"):
            rbar_statistic(rec, lp_cs)


class TestModeFidelity:
    def test_streaming_passthrough(self):
        rec, lp, sol = _pp_record(n=64, horizon=4.0, seed=9)
        want = (rec.fid_low_raw, rec.fid_high_raw)
        assert mode_fidelity(rec, lp, sol) == want
        assert mode_fidelity(rec, lp, sol, eps=rec.eps_fidelity) == want

    def test_recompute_matches_direct_run(self):
        # eps only affects the accumulator, not the dynamics, so rescanning
        # the log at a new eps must reproduce a direct run at that eps
        rec, lp, sol = _pp_record(n=64, horizon=4.0, seed=9, log_events=True)
        direct, _, _ = _pp_record(n=64, horizon=4.0, seed=9, eps_fidelity=0.2)
        assert mode_fidelity(rec, lp, sol, eps=0.2) == (
            direct.fid_low_raw,
            direct.fid_high_raw,
        )

    def test_wider_band_shrinks_fidelity_time(self):
        rec, lp, sol = _pp_record(n=64, horizon=4.0, seed=9, log_events=True)
        lo_narrow, hi_narrow = mode_fidelity(rec, lp, sol, eps=0.05)
        lo_wide, hi_wide = mode_fidelity(rec, lp, sol, eps=0.3)
        assert lo_wide <= lo_narrow
        assert hi_wide <= hi_narrow

    def test_rejects_single_mode_record(self):
        params, lp, da, ds = ss_dual_setup()
        sol = solve_wcp(params, lp)
        pol = PolicySpec("P", lp.mode1)
        cfg = RunConfig(
            params=params, n=16, arrival_dists=da, service_dists=ds,
            scaling=_scaling(16), policy=pol, horizon=2.0, seed=1,
        )
        with pytest.raises(ValueError, match="dual-mode"):
            mode_fidelity(run(cfg), lp, sol)

    def test_rejects_mismatched_wcp(self):
        rec, lp, sol = _pp_record(n=16, horizon=2.0, seed=1)
        hjb = dataclasses.replace(sol.hjb, zstar=sol.hjb.zstar * 1.5)
        wrong = dataclasses.replace(sol, hjb=hjb)
        with pytest.raises(ValueError, match="mismatch"):
            mode_fidelity(rec, lp, wrong)
        params_s = make_ss(lam_hat=[-0.5, 0.0])
        lp_s = analyze_lp(params_s)
        sol_s = solve_wcp(params_s, lp_s)
        with pytest.raises(ValueError, match="single-mode"):
            mode_fidelity(rec, lp, sol_s)

    def test_rejects_foreign_lp_and_bad_eps(self):
        rec, lp, sol = _pp_record(n=16, horizon=2.0, seed=1)
        _, lp_cs, _, _ = cs_dual_setup()
        with pytest.raises(ValueError, match="mode pair"):
            mode_fidelity(rec, lp_cs, sol)
        with pytest.raises(ValueError, match="eps"):
            mode_fidelity(rec, lp, sol, eps=0.0)

    def test_new_eps_needs_event_log(self):
        rec, lp, sol = _pp_record(n=16, horizon=2.0, seed=1)
        with pytest.raises(ValueError, match="log_events"):
            mode_fidelity(rec, lp, sol, eps=0.01)


# ----------------------------------------------------------------------------
# slow-path replay


class TestReplay:
    @pytest.mark.parametrize("case", _policy_runs(), ids=lambda c: c[0])
    def test_replay_is_bitwise_equal(self, case):
        name, params, da, ds, pol = case
        cfg = RunConfig(
            params=params, n=64, arrival_dists=da, service_dists=ds,
            scaling=_scaling(64), policy=pol, horizon=6.0, seed=2024,
            log_events=True, snapshot_t=2.5,
        )
        rec = run(cfg)
        assert rec.A[0] > 100, "run should see real traffic"
        scan = verify_replay(rec)
        # spot-check the exactness the verifier enforces
        assert scan["j_raw"] == rec.j_raw
        assert scan["T"] == rec.T and scan["I"] == rec.I
        assert scan["w_hat_snapshot"] == rec.w_hat_snapshot

    def test_replay_of_empty_run(self):
        rec, _, _ = _pp_record(horizon=2.0, seed=3, arrival_cap=0, log_events=True)
        scan = verify_replay(rec)
        assert scan["I"] == (2.0, 2.0)
        assert scan["j_raw"] == (0.0, 0.0)

    def test_replay_is_deterministic(self):
        rec, _, _ = _pp_record(n=16, horizon=3.0, seed=7, log_events=True)
        assert replay_statistics(rec) == replay_statistics(rec)

    def test_needs_event_log(self):
        rec, _, _ = _pp_record(n=16, horizon=2.0, seed=1)
        with pytest.raises(ValueError, match="log_events"):
            replay_statistics(rec)

    def test_tampered_log_is_caught(self):
        rec, _, _ = _pp_record(n=16, horizon=3.0, seed=7, log_events=True)
        evs = list(rec.events)
        idx = next(i for i, ev in enumerate(evs) if ev[0] == "arrival")
        kind, t, i, job = evs[idx]
        evs[idx] = (kind, t, 1 - i, job)
        bad = dataclasses.replace(rec, events=evs)
        with pytest.raises(ReplayMismatch):
            verify_replay(bad)


# ----------------------------------------------------------------------------
# Kolmogorov-Smirnov distance


class TestKsStatistic:
    def test_identical_samples(self):
        a = [0.3, 1.2, 2.0, 5.5]
        assert ks_statistic(a, a) == 0.0

    def test_disjoint_samples(self):
        assert ks_statistic([0.0, 1.0, 2.0], [10.0, 11.0]) == 1.0

    def test_hand_value(self):
        # F_b jumps to 1 at 1.5 while F_a is still 1/4
        assert ks_statistic([1.0, 2.0, 3.0, 4.0], [1.5]) == 0.75

    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        a = rng.normal(size=23)
        b = rng.normal(0.4, 1.3, size=17)
        grid = np.concatenate([a, b])
        brute = max(
            abs((a <= x).mean() - (b <= x).mean()) for x in grid
        )
        assert ks_statistic(a, b) == pytest.approx(brute, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ks_statistic([], [1.0])


# ----------------------------------------------------------------------------
# distribution defaults and ladder config


class TestDefaultDistributions:
    def test_families_match_scv(self):
        params = make_ss(c2_service=[[4.0, 1.0], [0.25, 0.4]])
        arr, svc = default_distributions(params)
        assert arr == (Exponential(), Exponential())
        assert svc[0][0] == Hyperexp2Balanced(4.0)
        assert svc[0][1] == Exponential()
        assert svc[1][0] == ErlangK(4)
        assert isinstance(svc[1][1], Lognormal) and svc[1][1].c2 == 0.4
        for i in range(2):
            for k in range(2):
                assert svc[i][k].c2 == pytest.approx(params.c2_service[i][k])


class TestLadderConfig:
    def test_defaults(self):
        lad = LadderConfig(n_values=(4, 16, 64))
        assert lad.replications == 30
        assert lad.n_values == (4, 16, 64)

    @pytest.mark.parametrize(
        "kw",
        [
            {"n_values": ()},
            {"n_values": (16, 4)},
            {"n_values": (4, 4)},
            {"n_values": (0, 4)},
            {"n_values": (4,), "replications": 29},
            {"n_values": (4,), "confidence": 1.0},
            {"n_values": (4,), "confidence": 0.0},
            {"n_values": (4,), "horizon": 0.0},
            {"n_values": (4,), "eps_fidelity": 0.0},
            {"n_values": (4,), "snapshot_t": -1.0},
            {"n_values": (4,), "tail_tol": 0.0},
            {"n_values": (4,), "ks_paths": 1},
            {"n_values": (4,), "verify_replays": 31},
        ],
    )
    def test_invalid_rejected(self, kw):
        with pytest.raises(ValueError):
            LadderConfig(**kw)


# ----------------------------------------------------------------------------
# the ladder experiment


def _ss_params():
    return make_ss(mu_hat=[[1.0, 0.0], [0.0, 0.0]], c2_service=[[4.0, 1.0], [1.0, 1.0]])


_SMOKE_LADDER = LadderConfig(
    n_values=(4, 16), replications=30, horizon=8.0, tail_tol=1e-2, ks_paths=64
)


class TestAoExperiment:
    def test_dual_report_shape(self):
        rep = ao_experiment(_SMOKE_LADDER, _ss_params(), "auto", seed=11)
        assert rep.policy == "PP" and rep.case == "dual"
        assert rep.p == 1 and rep.q == 0
        assert rep.zstar is not None and rep.zstar > 0
        assert rep.v0 > 0
        assert rep.eps_fidelity == rep.zstar / 4.0
        assert rep.snapshot_t == 4.0
        assert len(rep.levels) == 2
        for lv, n in zip(rep.levels, (4, 16)):
            assert lv.n == n
            assert lv.theta_n == ScalingPolicy(n=n, m_moment=6.0).theta_n
            assert lv.replications == 30
            assert lv.cost > 0 and lv.cost_se > 0
            assert lv.cost_m2 >= lv.cost**2
            assert 0.0 <= lv.ssc <= 1.0
            assert lv.rbar_mean >= 0
            assert lv.fid_low_mean is not None and lv.fid_high_mean is not None
            assert 0.0 <= lv.ks_stat <= 1.0
            assert lv.snapshot_count == 30
            assert lv.e_max_q90 >= lv.e_max_median > 0

    def test_single_case_report(self):
        params = make_ss(lam_hat=[-0.5, 0.0])
        rep = ao_experiment(_SMOKE_LADDER, params, seed=4)
        assert rep.case == "single"
        assert rep.policy in ("P", "T2")
        assert rep.zstar is None and rep.eps_fidelity is None
        lv = rep.levels[0]
        assert lv.fid_low_mean is None and lv.fid_high_se is None
        stats = {row[1] for row in rep.csv_rows()}
        assert "fid_low" not in stats and "cost" in stats

    def test_explicit_policy_matches_auto(self):
        auto = ao_experiment(_SMOKE_LADDER, _ss_params(), "auto", seed=11)
        named = ao_experiment(_SMOKE_LADDER, _ss_params(), "PP", seed=11)
        assert auto.to_dict() == named.to_dict()

    def test_case_mismatch_names_condition(self):
        with pytest.raises(PolicyCaseMismatch, match="prescribes PP"):
            ao_experiment(_SMOKE_LADDER, _ss_params(), "T2T2", seed=11)
        with pytest.raises(PolicyCaseMismatch, match="priority class"):
            ao_experiment(_SMOKE_LADDER, _ss_params(), "P", seed=11)
        with pytest.raises(ValueError, match="unknown policy"):
            ao_experiment(_SMOKE_LADDER, _ss_params(), "FIFO", seed=11)

    def test_report_is_deterministic_and_serializable(self):
        r1 = ao_experiment(_SMOKE_LADDER, _ss_params(), seed=11)
        r2 = ao_experiment(_SMOKE_LADDER, _ss_params(), seed=11)
        assert r1.to_dict() == r2.to_dict()
        blob = json.dumps(r1.to_dict(), sort_keys=True)
        assert json.loads(blob)["policy"] == "PP"
        r3 = ao_experiment(_SMOKE_LADDER, _ss_params(), seed=12)
        assert r3.to_dict() != r1.to_dict()

    def test_threaded_run_identical(self, monkeypatch):
        base = ao_experiment(_SMOKE_LADDER, _ss_params(), seed=11)
        monkeypatch.setenv("HTS_THREADS", "3")
        threaded = ao_experiment(_SMOKE_LADDER, _ss_params(), seed=11)
        assert threaded.to_dict() == base.to_dict()

    def test_csv_rows_long_format(self):
        rep = ao_experiment(_SMOKE_LADDER, _ss_params(), seed=11)
        rows = rep.csv_rows()
        assert all(len(row) == 4 for row in rows)
        assert {row[0] for row in rows} == {4, 16}
        stats = {row[1] for row in rows}
        for name in ("cost", "ssc", "rbar", "fid_low", "fid_high", "ks", "e_max_median"):
            assert name in stats

    def test_short_horizon_tail_refused(self):
        lad = LadderConfig(n_values=(4,), replications=30, horizon=1.0, ks_paths=64)
        with pytest.raises(TailBoundExceeded, match="horizon"):
            ao_experiment(lad, _ss_params(), seed=11)

    def test_statistics_tighten_along_ladder(self):
        lad = LadderConfig(
            n_values=(4, 16, 64), replications=30, horizon=15.0,
            tail_tol=1e-3, ks_paths=256,
        )
        rep = ao_experiment(lad, _ss_params(), seed=11)
        first, last = rep.levels[0], rep.levels[-1]
        assert last.ssc < first.ssc
        assert last.rbar_mean < first.rbar_mean
        assert last.fid_high_mean < first.fid_high_mean
        assert last.e_max_median < first.e_max_median
        assert abs(last.cost - rep.v0) <= abs(first.cost - rep.v0) + 2 * (
            first.cost_se + last.cost_se
        )
