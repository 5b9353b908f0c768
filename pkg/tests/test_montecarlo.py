"""Batch execution, merging, survival/tail estimation, bound verifiers."""

import math

import numpy as np
import pytest

from ratchet_sim.model_core import ModelParams
from ratchet_sim.montecarlo import (
    BatchSpec,
    RegionError,
    TailFitError,
    estimate_click_kernel,
    fit_exponential_tail,
    merge_summaries,
    run_batch,
    summaries_equal,
    survival_curve_from_times,
    verify_m1_growth_bound,
    verify_recurrence,
    wilson_interval,
)
from ratchet_sim.proof_constants import derive_constants

P0 = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=1e-3, seed=77)


def small_spec(**kw):
    defaults = dict(
        n_runs=4, params=P0, init="poisson:2", horizon=0.5, record_every=1
    )
    defaults.update(kw)
    return BatchSpec(**defaults)


class TestRunBatch:
    def test_zero_horizon_single_run(self):
        s = run_batch(small_spec(n_runs=1, horizon=0.0))
        frac, se = s.click_fraction()
        assert frac == 0.0 and s.n_failed == 0
        with pytest.raises((TailFitError, ValueError)):
            s.tail_fit()

    def test_no_mutation_never_clicks(self):
        p = ModelParams(n=5.0, alpha=0.0, lam=0.0, dt=1e-2, seed=5)
        s = run_batch(small_spec(params=p, init="point:0", n_runs=20, horizon=5.0))
        assert s.click_fraction()[0] == 0.0

    def test_bit_reproducible(self):
        a = run_batch(small_spec(n_runs=6))
        b = run_batch(small_spec(n_runs=6))
        assert summaries_equal(a, b)
        assert a.to_dict() == b.to_dict()

    def test_threads_do_not_change_results(self):
        a = run_batch(small_spec(n_runs=6))
        b = run_batch(small_spec(n_runs=6), threads=2)
        assert summaries_equal(a, b)

    def test_half_batch_merge_equals_full_batch(self):
        full = run_batch(small_spec(n_runs=8))
        lo = run_batch(small_spec(n_runs=4))
        hi = run_batch(small_spec(n_runs=4, run_start=4))
        merged = merge_summaries(lo, hi)
        assert summaries_equal(merged, full)
        assert merged.to_dict() == full.to_dict()

    def test_merge_rejects_overlap_and_mismatch(self):
        a = run_batch(small_spec(n_runs=4))
        with pytest.raises(ValueError):
            merge_summaries(a, a)
        b = run_batch(small_spec(n_runs=4, horizon=0.25, run_start=4))
        with pytest.raises(ValueError):
            merge_summaries(a, b)

    def test_reference_params_click_before_horizon_200(self):
        # the ratchet clicks within 200 time units in essentially every run
        p = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=5e-3, seed=15)
        s = run_batch(
            BatchSpec(n_runs=400, params=p, init="poisson:2", horizon=200.0, record_every=10)
        )
        assert s.click_fraction()[0] >= 0.99

    def test_survival_curve_nonincreasing(self):
        p = ModelParams(n=5.0, alpha=0.2, lam=2.0, dt=5e-3, seed=3)
        s = run_batch(small_spec(params=p, n_runs=60, horizon=100.0, record_every=10))
        curve = s.survival_curve()
        assert (np.diff(curve.fraction) <= 0).all()
        assert curve.fraction[0] == 1.0


class TestSurvivalAndTailFit:
    def exp_curve(self, rate, n, seed, horizon=50.0):
        rng = np.random.default_rng(seed)
        t = rng.exponential(1.0 / rate, n)
        t = np.where(t > horizon, np.nan, t)
        return survival_curve_from_times(t, horizon), t

    def test_synthetic_exponential_recovers_rate(self):
        curve, raw = self.exp_curve(2.0, 10_000, seed=1)
        fit = fit_exponential_tail(curve, raw_times=raw)
        assert fit.ci_low <= 2.0 <= fit.ci_high
        assert fit.rho_hat == pytest.approx(2.0, rel=0.1)
        assert not fit.nonlinear
        assert fit.n_points >= 20

    def test_pareto_flags_nonlinearity(self):
        rng = np.random.default_rng(2)
        t = rng.pareto(1.2, 10_000) + 1.0
        curve = survival_curve_from_times(np.where(t > 1e4, np.nan, t), 1e4)
        fit = fit_exponential_tail(curve, raw_times=t)
        assert fit.nonlinear

    def test_censoring_truncates_fit(self):
        # horizon below the 99th percentile: the tail segment is unobserved
        rng = np.random.default_rng(3)
        t = rng.exponential(1.0, 2000)
        horizon = 2.0  # q99 of Exp(1) is 4.6
        t = np.where(t > horizon, np.nan, t)
        with pytest.raises(TailFitError):
            fit_exponential_tail(survival_curve_from_times(t, horizon), raw_times=t)

    def test_too_few_points_rejected(self):
        rng = np.random.default_rng(4)
        t = rng.exponential(1.0, 30)
        with pytest.raises(ValueError):
            fit_exponential_tail(survival_curve_from_times(t, 100.0), raw_times=t)


class TestWilson:
    def test_interval_properties(self):
        lo, hi = wilson_interval(0, 100)
        assert lo == 0.0 and hi > 0.0
        lo1, hi1 = wilson_interval(50, 100)
        assert lo1 < 0.5 < hi1
        lo2, _ = wilson_interval(99, 100)
        assert lo2 > 0.9

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            wilson_interval(0, 0)


class TestVerifiers:
    def test_m1_growth_trivial_for_large_c_and_auto_raised_n(self):
        p = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=5e-3, seed=9)
        checks = verify_m1_growth_bound(p, "poisson:2", 0.0, 0.2, [1.2], n_runs=10)
        # n_runs is auto-raised far beyond 10 to make the SE meaningful
        (c,) = checks
        assert c.passed and c.empirical >= c.bound
        assert c.se <= (1.0 - c.bound) / 3.0 + 1e-12

    def test_m1_growth_reference_values(self):
        p = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=2e-3, seed=10)
        checks = verify_m1_growth_bound(
            p, "poisson:2", 0.0, 1.0, [0.5, 1.0], n_runs=1500
        )
        by_name = {c.name: c for c in checks}
        assert by_name["m1_growth_c=0.5"].bound == pytest.approx(0.917915, abs=1e-6)
        assert by_name["m1_growth_c=1"].bound == pytest.approx(0.993262, abs=1e-6)
        assert all(c.passed for c in checks)

    def test_recurrence_detectors_fire(self):
        p = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=5e-3, seed=11)
        checks = verify_recurrence(p, "poisson:8", n_runs=60, horizon=200.0)
        assert all(c.passed for c in checks)
        assert all(c.empirical == 1.0 for c in checks)

    def test_click_kernel_zero_window(self):
        consts = derive_constants(P0)
        est, (lo, hi) = estimate_click_kernel(P0, consts, "small_x0", 30, 0.0)
        assert est == 0.0 and lo == 0.0

    def test_click_kernel_positive_probability(self):
        p = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=1e-3, seed=12)
        consts = derive_constants(p)
        window = consts.t3_prime * 5 * p.n
        est, (lo, hi) = estimate_click_kernel(p, consts, "small_x0", 150, window)
        assert lo > 0.0

    def test_click_kernel_monotone_in_window(self):
        p = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=2e-3, seed=13)
        consts = derive_constants(p)
        e1, _ = estimate_click_kernel(p, consts, "small_x0", 100, 0.5)
        e2, _ = estimate_click_kernel(p, consts, "small_x0", 100, 2.0)
        assert e2 >= e1

    def test_click_kernel_m1_region(self):
        p = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=2e-3, seed=14)
        consts = derive_constants(p)
        est, (lo, _) = estimate_click_kernel(p, consts, "m1_below_beta", 80, 50.0)
        assert lo > 0.0

    def test_unknown_region_rejected(self):
        consts = derive_constants(P0)
        with pytest.raises(ValueError):
            estimate_click_kernel(P0, consts, "nowhere", 10, 1.0)


class TestSuiteWiring:
    """Every named suite runs end to end at reduced (but robust) sizes."""

    def test_m1_growth_suite(self):
        from ratchet_sim.montecarlo import suite_m1_growth

        checks = suite_m1_growth({"n_runs": 100, "dt": 2e-3, "seed": 31})
        assert [c.name for c in checks] == ["m1_growth_c=0.5", "m1_growth_c=1"]
        assert all(c.passed for c in checks)

    def test_recurrence_suite(self):
        from ratchet_sim.montecarlo import suite_recurrence

        checks = suite_recurrence({"n_runs": 50, "horizon": 200.0, "seed": 32})
        assert {c.name for c in checks} == {"h_lambda_set", "t0_or_s_beta_set"}
        assert all(c.passed for c in checks)

    def test_click_kernel_suite(self):
        from ratchet_sim.montecarlo import suite_click_kernel

        checks = suite_click_kernel({"n_runs": 60, "dt": 2e-3, "seed": 33})
        assert len(checks) == 2
        assert all(c.passed for c in checks)

    def test_moment_identity_suite(self):
        from ratchet_sim.montecarlo import suite_moment_identity

        checks = suite_moment_identity(
            {"n_runs": 1200, "horizon": 0.5, "seed": 34}
        )
        names = [c.name for c in checks]
        assert "m1_drift_residual_neutral" in names
        assert "m1_x0_cross_variation_error" in names
        assert all(c.passed for c in checks)

    def test_coupling_suite(self):
        from ratchet_sim.montecarlo import suite_coupling

        checks = suite_coupling(
            {"n_pairs": 8, "tc_runs": 5, "horizon": 0.3, "seed": 35}
        )
        assert any(c.name == "coupling_violations_monotone_in_dt" for c in checks)
        assert any(c.name == "x0_vs_reference_time_change" for c in checks)
        assert all(c.passed for c in checks)

    def test_y0_suite(self):
        from ratchet_sim.montecarlo import suite_y0

        checks = suite_y0({"n_samples": 3000, "n_mono": 1000, "seed": 36})
        names = {c.name for c in checks}
        assert "y0_ks_exact_vs_euler" in names
        assert "y0_median_over_delta" in names
        assert all(c.passed for c in checks)

    def test_staircase_suite(self):
        from ratchet_sim.montecarlo import suite_staircase

        checks = suite_staircase({})
        assert all(c.passed for c in checks)

    def test_haigh_suite(self):
        from ratchet_sim.montecarlo import suite_haigh

        checks = suite_haigh(
            {"n_generations": 4000, "n_replicates": 150, "n1_replicates": 500, "seed": 37}
        )
        assert all(c.passed for c in checks)
