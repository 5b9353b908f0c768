"""Discrete-generation ancestor model: weighted resampling plus mutation.

Each generation, every one of the N children picks a parent with probability
proportional to (1 - alpha)^k (k = parent's mutation count) and then gains a
Poisson(lam) number of new mutations. The population size is an integer here
and is conserved exactly; it is only qualitatively related to the effective
size of the diffusion.

Since children never lose mutations, the best (lowest) occupied class index
is nondecreasing; a click is any generation at which it advances.
"""

from dataclasses import dataclass

import numpy as np

from .streams import substream

__all__ = [
    "DiscretePopulation",
    "ChainStats",
    "haigh_generation",
    "haigh_click_time",
    "run_chain",
    "click_times_batch",
]


@dataclass
class DiscretePopulation:
    """Integer counts per mutation class; counts[j] holds class offset + j."""

    counts: np.ndarray
    generation: int = 0
    offset: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size == 0:
            raise ValueError("counts must be a non-empty 1-d integer array")
        if (self.counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if self.counts.sum() < 1:
            raise ValueError("population must contain at least one individual")

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    @property
    def best_class(self) -> int:
        return self.offset + int(np.flatnonzero(self.counts > 0)[0])


@dataclass
class ChainStats:
    """Summary of a multi-generation run of the chain."""

    final: DiscretePopulation
    click_generations: list[int]
    all_mutate_count: int
    generations: int


def _trim(counts: np.ndarray, offset: int) -> tuple[np.ndarray, int]:
    nz = np.flatnonzero(counts > 0)
    return counts[nz[0] : nz[-1] + 1].copy(), offset + int(nz[0])


def _one_generation(
    counts: np.ndarray, alpha: float, lam: float, rng: np.random.Generator
) -> tuple[np.ndarray, bool]:
    """Resample N children and mutate them; True if every child mutated.

    Fitness weights are computed relative to the current best class, so
    (1 - alpha)^k never underflows no matter how far the ratchet has moved.
    """
    n_pop = int(counts.sum())
    k_rel = np.arange(counts.size, dtype=np.float64)
    if alpha >= 1.0:
        # Only the best class can reproduce.
        weights = (k_rel == k_rel[counts > 0].min()) * counts
    else:
        weights = counts * (1.0 - alpha) ** k_rel
    probs = weights / weights.sum()
    parents_per_class = rng.multinomial(n_pop, probs)
    child_classes = np.repeat(np.arange(counts.size), parents_per_class)
    gains = rng.poisson(lam, n_pop)
    new_counts = np.bincount(
        child_classes + gains, minlength=counts.size
    ).astype(np.int64)
    return new_counts, bool(n_pop > 0 and (gains >= 1).all())


def haigh_generation(
    pop: DiscretePopulation, alpha: float, lam: float, rng: np.random.Generator
) -> DiscretePopulation:
    """Advance the population one generation (size conserved exactly)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if lam < 0.0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    new_counts, _ = _one_generation(pop.counts, alpha, lam, rng)
    trimmed, offset = _trim(new_counts, pop.offset)
    return DiscretePopulation(trimmed, generation=pop.generation + 1, offset=offset)


def run_chain(
    pop0: DiscretePopulation,
    alpha: float,
    lam: float,
    n_generations: int,
    rng: np.random.Generator,
) -> ChainStats:
    """Run n_generations, tracking clicks and the all-children-mutated count."""
    counts, offset = _trim(pop0.counts, pop0.offset)
    clicks: list[int] = []
    all_mutate = 0
    for g in range(1, n_generations + 1):
        counts, everyone = _one_generation(counts, alpha, lam, rng)
        if everyone:
            all_mutate += 1
        new_counts, new_offset = _trim(counts, offset)
        if new_offset > offset:
            clicks.append(g)
        counts, offset = new_counts, new_offset
    final = DiscretePopulation(counts, generation=pop0.generation + n_generations, offset=offset)
    return ChainStats(
        final=final,
        click_generations=clicks,
        all_mutate_count=all_mutate,
        generations=n_generations,
    )


def haigh_click_time(
    pop0: DiscretePopulation,
    alpha: float,
    lam: float,
    max_gen: int,
    rng: np.random.Generator,
) -> int | None:
    """First generation at which the current best class empties, or None."""
    counts, offset = _trim(pop0.counts, pop0.offset)
    start = offset
    for g in range(1, max_gen + 1):
        counts, _ = _one_generation(counts, alpha, lam, rng)
        counts, offset = _trim(counts, offset)
        if offset > start:
            return g
    return None


def click_times_batch(
    pop0: DiscretePopulation,
    alpha: float,
    lam: float,
    max_gen: int,
    n_replicates: int,
    seed: int,
) -> list[int | None]:
    """First-click generation per replicate (None if unset by max_gen)."""
    return [
        haigh_click_time(pop0, alpha, lam, max_gen, substream(seed, i))
        for i in range(n_replicates)
    ]
