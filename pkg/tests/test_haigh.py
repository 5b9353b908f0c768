"""Discrete-generation chain: resampling, mutation, clicks."""

import math

import numpy as np
import pytest

from ratchet_sim.haigh import (
    DiscretePopulation,
    click_times_batch,
    haigh_click_time,
    haigh_generation,
    run_chain,
)
from ratchet_sim.streams import substream


class TestGeneration:
    def test_population_size_conserved(self):
        pop = DiscretePopulation(np.array([3, 2, 1]))
        rng = substream(0, 0)
        for _ in range(200):
            pop = haigh_generation(pop, 0.3, 1.0, rng)
            assert pop.size == 6

    def test_no_mutation_from_best_class_is_constant(self):
        pop = DiscretePopulation(np.array([4]))
        out = haigh_generation(pop, 0.5, 0.0, substream(1, 0))
        assert np.array_equal(out.counts, [4])
        assert out.offset == 0 and out.generation == 1

    def test_alpha_zero_parents_chosen_uniformly(self):
        # fixed parent pool (2 in class 0, 1 in class 1), lam = 0:
        # each child lands in class 0 with probability 2/3
        pop = DiscretePopulation(np.array([2, 1]))
        rng = substream(2, 0)
        total0 = 0
        n = 4000
        for _ in range(n):
            out = haigh_generation(pop, 0.0, 0.0, rng)
            if out.offset == 0:  # offset 1 means nobody picked class 0
                total0 += out.counts[0]
        p = total0 / (3 * n)
        se = math.sqrt((2 / 3) * (1 / 3) / (3 * n))
        assert abs(p - 2 / 3) < 4 * se

    def test_full_selection_only_best_class_reproduces(self):
        pop = DiscretePopulation(np.array([1, 5]))
        out = haigh_generation(pop, 1.0, 0.0, substream(3, 0))
        assert out.offset == 0
        assert np.array_equal(out.counts, [6])

    def test_rejects_bad_rates(self):
        pop = DiscretePopulation(np.array([2]))
        with pytest.raises(ValueError):
            haigh_generation(pop, -0.1, 1.0, substream(4, 0))
        with pytest.raises(ValueError):
            haigh_generation(pop, 1.5, 1.0, substream(4, 0))
        with pytest.raises(ValueError):
            haigh_generation(pop, 0.5, -1.0, substream(4, 0))

    def test_population_validation(self):
        with pytest.raises(ValueError):
            DiscretePopulation(np.array([0, 0]))
        with pytest.raises(ValueError):
            DiscretePopulation(np.array([-1, 2]))


class TestClicks:
    def test_never_clicks_without_mutation(self):
        pop = DiscretePopulation(np.array([3]))
        assert haigh_click_time(pop, 0.3, 0.0, 500, substream(5, 0)) is None

    def test_single_individual_click_time_is_geometric(self):
        # N = 1: clicks at the first generation with a positive Poisson draw
        lam = 1.0
        times = click_times_batch(
            DiscretePopulation(np.array([1])), 0.5, lam, 10_000, 4000, seed=6
        )
        t = np.array([x for x in times if x is not None], dtype=float)
        assert t.size == 4000
        p = 1.0 - math.exp(-lam)
        se = math.sqrt((1 - p) / p**2 / t.size)
        assert abs(t.mean() - 1.0 / p) < 3 * se
        # geometric law at the first two atoms
        assert abs((t == 1).mean() - p) < 4 * math.sqrt(p * (1 - p) / t.size)

    def test_all_mutate_frequency(self):
        n_pop, lam, n_gen = 3, 1.0, 20_000
        stats = run_chain(
            DiscretePopulation(np.array([n_pop])), 0.3, lam, n_gen, substream(7, 0)
        )
        p = (1.0 - math.exp(-lam)) ** n_pop
        se = math.sqrt(p * (1 - p) / n_gen)
        assert abs(stats.all_mutate_count / n_gen - p) < 3 * se

    def test_click_curve_dominates_geometric_bound(self):
        lam, n_pop = 1.0, 3
        p_all = (1.0 - math.exp(-lam)) ** n_pop
        times = click_times_batch(
            DiscretePopulation(np.array([1, 2])), 0.3, lam, 50, 1500, seed=8
        )
        t = np.array([51 if x is None else x for x in times])
        for g in range(1, 51):
            emp = (t <= g).mean()
            bound = 1.0 - (1.0 - p_all) ** g
            assert emp >= bound

    def test_chain_tracks_successive_clicks(self):
        stats = run_chain(
            DiscretePopulation(np.array([3])), 0.3, 1.0, 2000, substream(9, 0)
        )
        assert len(stats.click_generations) > 100
        assert stats.final.offset >= len(stats.click_generations)
        assert all(
            b > a for a, b in zip(stats.click_generations, stats.click_generations[1:])
        )
