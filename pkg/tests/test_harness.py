import copy
import math

import numpy as np
import pytest

from bou_lab.engine import Limits
from bou_lab.errors import ConfigError
from bou_lab.harness import (ExperimentConfig, clt_experiment, coupling_experiment,
                             ensemble_summary, gw_experiment, lln_experiment,
                             run_ensemble)
from bou_lab.params import ModelParams
from bou_lab.spectral import SpectralFunction

X = SpectralFunction.monomial((1,))


def small_config(**overrides):
    params = ModelParams(d=1, sigma=math.sqrt(2.0), mu=1.0, lam=1.0, p=0.75)
    kwargs = dict(
        params=params,
        x0=(0.0,),
        test_functions=(X,),
        snapshot_times=(2.0, 4.0),
        terminal_time=14.0,
        replicas=400,
        seed=427,
        limits=Limits(max_particles=500_000),
        workers=1,
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


class TestConfigValidation:
    def test_rejects_small_ensembles(self):
        with pytest.raises(ConfigError):
            small_config(replicas=50)

    def test_rejects_unsorted_snapshots(self):
        with pytest.raises(ConfigError):
            small_config(snapshot_times=(4.0, 2.0))

    def test_rejects_terminal_before_snapshots(self):
        with pytest.raises(ConfigError):
            small_config(terminal_time=3.0)

    def test_terminal_gap_enforced_unless_relaxed(self):
        with pytest.raises(ConfigError):
            small_config(terminal_time=5.0)  # < 4 + 5/lambda_p = 14
        cfg = small_config(terminal_time=5.0, relax_terminal_gap=True)
        assert cfg.terminal_time == 5.0

    def test_sim_times_contain_half_and_full_terminal(self):
        cfg = small_config()
        assert 14.0 in cfg.sim_times and 7.0 in cfg.sim_times
        assert cfg.sim_times == tuple(sorted(cfg.sim_times))


class TestRunEnsemble:
    def test_deterministic_and_worker_independent(self):
        cfg1 = small_config(replicas=150)
        r1 = run_ensemble(cfg1)
        r2 = run_ensemble(small_config(replicas=150))
        assert r1.counts.tobytes() == r2.counts.tobytes()
        assert r1.functionals.tobytes() == r2.functionals.tobytes()
        r3 = run_ensemble(small_config(replicas=150, workers=2))
        assert r1.counts.tobytes() == r3.counts.tobytes()
        assert r1.hvalues.tobytes() == r3.hvalues.tobytes()

    def test_survival_fraction(self):
        cfg = small_config(replicas=2000)
        result = run_ensemble(cfg)
        frac = float(np.mean(result.survived))
        target = 1.0 - (1.0 - cfg.params.p) / cfg.params.p
        se = math.sqrt(target * (1 - target) / cfg.replicas)
        assert abs(frac - target) < 4 * se

    def test_summary_report_has_estimates_only(self):
        cfg = small_config(replicas=150)
        report = ensemble_summary(cfg, run_ensemble(cfg))
        assert report.verdicts == []
        assert report.all_passed
        assert 0.0 <= report.estimates["survival_fraction"] <= 1.0


class TestGWExperiment:
    def test_verdicts_reference_oracles(self):
        cfg = small_config(replicas=3000, snapshot_times=(4.0, 8.0),
                           terminal_time=18.0)
        report = gw_experiment(cfg)
        names = [v.name for v in report.verdicts]
        assert any("extinction" in n for n in names)
        assert any("Var(V_T)" in n for n in names)
        ext = next(v for v in report.verdicts if "extinction" in v.name)
        assert ext.oracle == pytest.approx(1.0 / 3.0)
        assert ext.passed is not None


class TestConditioning:
    def test_conditioned_statistics_ignore_dead_replicas(self):
        cfg = small_config(replicas=1200, snapshot_times=(4.0, 8.0),
                           terminal_time=18.0)
        result = run_ensemble(cfg)
        report_before = clt_experiment(cfg, result=result)

        corrupted = copy.deepcopy(result)
        dead = ~corrupted.survived
        corrupted.functionals[dead] = 1e9
        corrupted.hvalues[dead] = -1e9
        # counts of dead replicas at the terminal are zero and must stay so
        # for the survival mask itself; corrupt only earlier times.
        corrupted.counts[dead, :-1] = 7
        report_after = clt_experiment(cfg, result=corrupted)

        conditioned = ["KS V-component", "spatial variance", "KS spatial", "KS mass",
                       "max |pairwise correlation|"]
        for key in conditioned:
            before = next(v for v in report_before.verdicts if v.name.startswith(key))
            after = next(v for v in report_after.verdicts if v.name.startswith(key))
            assert before.empirical == after.empirical, key


class TestLLN:
    def test_constant_function_residual_identity(self):
        # f = c: e^{-lambda_p t} <X_t, f> = c V_t exactly, so the residual
        # is |c| |V_t - V_T| replica by replica.
        c = 2.5
        const = SpectralFunction.from_poly([[c, [0]]], 1)
        cfg = small_config(test_functions=(const,), replicas=300,
                           snapshot_times=(2.0, 4.0), terminal_time=14.0)
        result = run_ensemble(cfg)
        report = lln_experiment(cfg, result=result)
        params = cfg.params
        v4 = result.v_values(4.0, params)
        v_term = result.v_values(14.0, params)
        expected = float(np.mean(np.abs(c * v4 - c * v_term)))
        assert report.estimates["residual_means"][-1] == pytest.approx(expected, rel=1e-12)

    def test_residuals_shrink_and_pass_threshold(self):
        cfg = small_config(replicas=3000, snapshot_times=(2.0, 5.0, 8.0),
                           terminal_time=18.0)
        report = lln_experiment(cfg)
        assert report.all_passed, [v.__dict__ for v in report.verdicts if v.passed is False]
        means = report.estimates["residual_means"]
        assert means[-1] < means[0]


class TestEstimatorConsistency:
    def test_standard_errors_shrink_like_root_two(self):
        cfg_a = small_config(replicas=1500)
        cfg_b = small_config(replicas=3000)
        se_a = lln_experiment(cfg_a).estimates["residual_ses"][-1]
        se_b = lln_experiment(cfg_b).estimates["residual_ses"][-1]
        assert se_a / se_b == pytest.approx(math.sqrt(2.0), rel=0.10)


class TestCLTMechanics:
    def test_small_regime_report_structure(self):
        # Reduced scale: checks mechanics and rough magnitudes, not the
        # acceptance tolerances (those run at full scale in the acceptance
        # suite).
        cfg = small_config(replicas=1200, snapshot_times=(4.0, 8.0),
                           terminal_time=18.0)
        report = clt_experiment(cfg)
        assert report.kind == "clt-small"
        assert report.estimates["sigma2_oracle"] == pytest.approx(2.0, rel=1e-9)
        names = [v.name for v in report.verdicts]
        for key in ("KS V-component", "spatial variance", "KS spatial", "KS mass",
                    "max |pairwise correlation|", "proxy gap"):
            assert any(n.startswith(key) for n in names), key
        var_verdict = next(v for v in report.verdicts if v.name.startswith("spatial"))
        assert abs(var_verdict.empirical - 2.0) < 1.0

    def test_inconclusive_when_too_few_survivors(self):
        cfg = small_config(replicas=120, snapshot_times=(4.0, 8.0),
                           terminal_time=18.0)
        report = clt_experiment(cfg)
        assert report.inconclusive
        assert report.all_passed  # inconclusive is flagged, never a fake fail/pass

    def test_large_regime_spatial_is_martingale(self):
        params = ModelParams(d=1, sigma=0.5, mu=0.25, lam=1.0, p=1.0)
        cfg = ExperimentConfig(
            params=params, x0=(0.0,), test_functions=(X,),
            snapshot_times=(2.0, 4.0), terminal_time=9.0, replicas=800,
            seed=11, limits=Limits(max_particles=500_000), workers=1)
        report = clt_experiment(cfg)
        assert report.kind == "clt-large"
        medians = report.estimates["residual_medians"]
        assert medians[-1] < medians[0]
        assert "distance_correlation_V_H" in report.estimates


class TestCoupling:
    def test_pathwise_identity_and_ks(self):
        params = ModelParams(d=1, sigma=0.5, mu=0.25, lam=1.0, p=1.0)
        cfg = ExperimentConfig(
            params=params, x0=(2.0,), test_functions=(X,),
            snapshot_times=(3.0,), terminal_time=8.0, replicas=400,
            seed=99, limits=Limits(max_particles=500_000), workers=1)
        report = coupling_experiment(cfg)
        assert report.all_passed, [v.__dict__ for v in report.verdicts]
        identity = next(v for v in report.verdicts if "x0 V_T" in v.name)
        assert identity.empirical <= 1e-10


class TestReportSerialization:
    def test_json_deterministic(self):
        cfg = small_config(replicas=200)
        a = gw_experiment(cfg, run_ensemble(cfg)).to_json()
        b = gw_experiment(cfg, run_ensemble(cfg)).to_json()
        assert a == b

    def test_summary_lines_cover_all_verdicts(self):
        cfg = small_config(replicas=200)
        report = gw_experiment(cfg, run_ensemble(cfg))
        lines = report.summary_lines()
        assert len(lines) == len(report.verdicts) + 1
