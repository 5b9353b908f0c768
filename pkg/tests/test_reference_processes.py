"""Time-change sampler, Euler twin, shared-noise couplings, neutral exits."""

import math

import numpy as np
import pytest
from scipy import stats as st

from ratchet_sim import reference_processes as rp
from ratchet_sim.model_core import ModelParams, PopulationState
from ratchet_sim.proof_constants import derive_constants
from ratchet_sim.streams import substream

P0 = ModelParams(n=5.0, alpha=0.5, lam=1.0, dt=1e-4, seed=0)
C0 = derive_constants(P0)


class TestExactSampler:
    def test_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            rp.sample_y0_exact(0.0, substream(0, 0))
        with pytest.raises(ValueError):
            rp.sample_y0_exact(-1.0, substream(0, 0))

    def test_every_sample_finite_and_consistent(self):
        for i in range(50):
            s = rp.sample_y0_exact(0.02, substream(1, i))
            assert math.isfinite(s.t_prime_0) and s.t_prime_0 > 0
            assert s.sup_path >= 0.02
            assert 0 <= s.truncation_error_bound < 1e-6 * s.sup_path

    def test_hitting_time_scales_exactly_linearly_in_delta(self):
        # same Brownian path: doubling delta doubles the hitting time exactly
        for i in range(20):
            a = rp.sample_y0_exact(0.01, substream(2, i))
            b = rp.sample_y0_exact(0.02, substream(2, i))
            assert b.t_prime_0 == 2.0 * a.t_prime_0
            assert b.sup_path == 2.0 * a.sup_path

    def test_median_ratio_matches_pinned_oracle(self):
        # oracle: 1e6-path pre-build run of the unit integral, median 2.1947
        t, _ = rp.y0_exact_batch(0.04, 4000, seed=3)
        assert np.median(t) / 0.04 == pytest.approx(2.1947, abs=0.12)

    def test_joint_success_monotone_as_delta_shrinks(self):
        # P(hit zero by t3' while staying below delta + mu) grows as delta drops
        probs = []
        for k, delta in enumerate((0.04, 0.02, 0.01)):
            t, sup = rp.y0_exact_batch(delta, 3000, seed=40 + k)
            probs.append(np.mean((t <= C0.t3_prime) & (sup <= delta + C0.mu)))
        assert probs[0] < probs[1] < probs[2]

    def test_time_change_reconstruction_is_brownian(self):
        # rebuild the driving increments on a uniform clock grid and check
        # they behave like Brownian increments of the right variance
        delta, h = 0.04, 1e-4
        du = 2e-3 * delta
        n_grid = 150
        u_grid = du * np.arange(1, n_grid + 1)
        rng = substream(4, 0)
        incs = []
        for _ in range(300):
            log_path = [0.0]
            while log_path[-1] > math.log(1e-13):
                block = -h + 2 * math.sqrt(h) * rng.standard_normal(4096)
                log_path.extend((log_path[-1] + np.cumsum(block)).tolist())
            y = delta * np.exp(np.array(log_path))
            d_cum = np.concatenate([[0.0], np.cumsum(h * 0.5 * (y[1:] + y[:-1]))])
            idx = np.searchsorted(d_cum, u_grid)
            if idx[-1] >= y.size:
                continue  # absorbed before the grid ends; skip this path
            y0_u = np.concatenate([[delta], y[idx]])
            dw = (np.diff(y0_u) - du) / (2.0 * np.sqrt(y0_u[:-1]))
            incs.append(dw)
        dw = np.concatenate(incs)
        mean_se = math.sqrt(du / dw.size)
        assert abs(dw.mean()) < 4 * mean_se
        assert dw.var() / du == pytest.approx(1.0, abs=0.1)


class TestEulerSampler:
    def test_same_seed_same_sample(self):
        a = rp.sample_y0_euler(0.02, 1e-5, substream(5, 7))
        b = rp.sample_y0_euler(0.02, 1e-5, substream(5, 7))
        assert a == b

    def test_is_absorbed_in_finite_time(self):
        s = rp.sample_y0_euler(0.02, 1e-5, substream(6, 0))
        assert s.t_prime_0 > 0 and s.truncation_error_bound == 0.0

    def test_cap_raises_when_hit(self):
        with pytest.raises(RuntimeError):
            # median is ~2.2 delta; a cap far below that trips quickly
            rp.sample_y0_euler(0.02, 1e-5, substream(7, 1), max_time=1e-4)

    def test_distribution_agrees_with_exact_sampler(self):
        delta = 0.04
        cap = 30 * delta
        ex, _ = rp.y0_exact_batch(delta, 3000, seed=8)
        eu, absorbed = rp.y0_euler_batch(delta, 2e-4 * delta, 3000, seed=9, t_cap=cap)
        assert (~absorbed).sum() < 0.25 * absorbed.size
        ks = st.ks_2samp(np.minimum(ex, cap), eu).statistic
        assert ks < 0.07


class TestCoupledCompare:
    def test_identical_diffusions_identical_paths(self):
        d = rp.neutral_wright_fisher(5.0)
        res = rp.coupled_compare(d, d, 0.4, 0.4, 0.5, 1e-3, substream(10, 0))
        assert res.violation_count == 0
        assert np.array_equal(res.y1, res.y2)

    def test_rejects_unordered_starts(self):
        d = rp.neutral_wright_fisher(5.0)
        with pytest.raises(ValueError):
            rp.coupled_compare(d, d, 0.5, 0.4, 0.5, 1e-3, substream(10, 1))

    def test_drifted_dominates_neutral_from_zero(self):
        d1 = rp.neutral_wright_fisher(5.0)
        d2 = rp.drifted_wright_fisher(5.0, 0.5)
        res = rp.coupled_compare(d1, d2, 0.0, 0.0, 1.0, 1e-4, substream(11, 0))
        assert res.violation_count == 0
        assert np.array_equal(res.y1, np.zeros_like(res.y1))  # 0 absorbs the neutral path
        assert res.y2[-1] > 0.0

    def test_ordered_pair_violations_below_one_percent(self):
        d1 = rp.neutral_wright_fisher(5.0)
        d2 = rp.drifted_wright_fisher(5.0, 0.5)
        viol = pts = 0
        for i in range(25):
            start = 0.2 + 0.2 * (i % 3)
            res = rp.coupled_compare(d1, d2, start, start, 0.5, 1e-4, substream(12, i))
            viol += res.violation_count
            pts += res.times.size - 1
        assert viol / pts < 0.01

    def test_violations_nonincreasing_under_dt_halving(self):
        d1 = rp.neutral_wright_fisher(5.0)
        d2 = rp.drifted_wright_fisher(5.0, 0.5)
        fracs = []
        for level, dt in enumerate((1e-4, 5e-5, 2.5e-5)):
            viol = pts = 0
            for i in range(10):
                res = rp.coupled_compare(
                    d1, d2, 0.3, 0.3, 0.3, dt, substream(13, 100 * level + i)
                )
                viol += res.violation_count
                pts += res.times.size - 1
            fracs.append(viol / pts)
        assert fracs[0] >= fracs[1] >= fracs[2] or max(fracs) < 1e-4


class TestNeutralExit:
    def test_boundary_starts_absorb_immediately(self):
        assert rp.neutral_wf_exit(0.0, 5.0, 10.0, 1e-3, substream(14, 0)) == rp.ExitRecord(0, 0.0)
        assert rp.neutral_wf_exit(1.0, 5.0, 10.0, 1e-3, substream(14, 1)) == rp.ExitRecord(1, 0.0)

    def test_exit_law_matches_martingale_probability(self):
        # driftless diffusion: P(hit 1 before 0 | start y) = y
        y = 0.3
        hits = 0
        n = 600
        for i in range(n):
            rec = rp.neutral_wf_exit(y, 5.0, 500.0, 1e-3, substream(15, i))
            assert rec.endpoint is not None
            hits += rec.endpoint
        se = math.sqrt(y * (1 - y) / n)
        assert abs(hits / n - y) < 3 * se

    def test_absorption_fraction_grows_with_horizon(self):
        def frac(horizon, seed):
            done = 0
            for i in range(200):
                rec = rp.neutral_wf_exit(0.5, 5.0, horizon, 1e-3, substream(seed, i))
                done += rec.endpoint is not None
            return done / 200

        lo = frac(0.5, 16)
        hi = frac(50.0, 16)
        assert hi >= lo
        assert hi > 0.95

    def test_rejects_out_of_range_start(self):
        with pytest.raises(ValueError):
            rp.neutral_wf_exit(1.5, 5.0, 1.0, 1e-3, substream(17, 0))


class TestTimeChangedComparison:
    def test_best_class_stays_below_reference(self):
        start = PopulationState(np.array([C0.delta, 1.0 - C0.delta, 0.0]))
        checked = violations = 0
        for i in range(15):
            c, v = rp.time_changed_comparison(
                start, P0, C0, horizon=2.0, rng=substream(18, i)
            )
            checked += c
            violations += v
        assert checked > 1000
        assert violations / checked < 0.01

    def test_rejects_large_initial_best_class(self):
        start = PopulationState(np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            rp.time_changed_comparison(start, P0, C0, 1.0, substream(19, 0))
