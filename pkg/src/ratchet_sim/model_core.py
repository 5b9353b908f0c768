"""Parameters, population states and exact moment computation.

The population is a probability vector over consecutive mutation classes.
States are stored as a dense window of weights plus an integer ``offset``
(the smallest class currently represented), so that extinct leading classes
can be dropped after a click instead of carrying zeros forever.

All moments are reported in absolute class units: shifting the offset by +1
adds exactly 1 to the mean and leaves the centered second moment unchanged.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SUM_TOL",
    "ZeroMassError",
    "ModelParams",
    "PopulationState",
    "Moments",
    "Violation",
    "ClampDiagnostics",
    "point_mass",
    "truncated_poisson",
    "make_state",
    "validate_state",
    "moments",
    "zero_class_mass",
    "jensen_slack",
    "clamp_and_renormalize",
]

# Tolerance on |sum(weights) - 1| for a state to count as on-simplex.
SUM_TOL = 1e-12


class ZeroMassError(RuntimeError):
    """The whole window clipped to zero mass (dt far too large)."""


@dataclass(frozen=True)
class ModelParams:
    """Model parameters plus numerical controls.

    n      -- effective population size (> 0, need not be an integer)
    alpha  -- selective cost per mutation (>= 0; 0 is the neutral case)
    lam    -- mutation rate (>= 0; 0 turns mutation off entirely)
    dt     -- Euler step in model time units
    tail_tol -- window is extended once the last cell exceeds this mass
    max_time -- simulation horizon
    seed   -- base seed; replicate i uses substream (seed, i)
    noise_floor_factor -- resampling noise is suppressed for cells below
        noise_floor_factor * dt / n. Clamped Euler otherwise inflates
        near-empty cells to a few times dt/n per step (the clip at zero
        pushes them up), which would drag every tail cell over tail_tol
        and grow the window without bound. Sub-floor cells follow their
        drift exactly; the floor scales with dt, so the scheme still
        converges. The current best class is exempt so clicks stay
        noise-driven.
    """

    n: float
    alpha: float
    lam: float
    dt: float = 1e-3
    tail_tol: float = 1e-10
    max_time: float = 100.0
    seed: int = 0
    noise_floor_factor: float = 32.0

    def __post_init__(self):
        if not (self.n > 0 and self.alpha >= 0 and self.lam >= 0):
            raise ValueError(
                f"need n > 0, alpha >= 0, lam >= 0, got ({self.n}, {self.alpha}, {self.lam})"
            )
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not 0.0 < self.tail_tol < 1.0:
            raise ValueError(f"tail_tol must be in (0, 1), got {self.tail_tol}")
        if self.max_time < 0:
            raise ValueError(f"max_time must be >= 0, got {self.max_time}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if self.noise_floor_factor < 0:
            raise ValueError(
                f"noise_floor_factor must be >= 0, got {self.noise_floor_factor}"
            )

    @property
    def noise_floor(self) -> float:
        return self.noise_floor_factor * self.dt / self.n


@dataclass
class PopulationState:
    """Probability weights over mutation classes offset, offset+1, ..."""

    weights: np.ndarray
    offset: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ValueError("weights must be a non-empty 1-d array")
        if self.offset < 0:
            raise ValueError(f"offset must be >= 0, got {self.offset}")

    @property
    def window_size(self) -> int:
        return int(self.weights.size)

    def copy(self) -> "PopulationState":
        return PopulationState(self.weights.copy(), self.offset, self.time)


@dataclass(frozen=True)
class Moments:
    """Mean mutation count and centered second moment (absolute units)."""

    m1: float
    m2: float


@dataclass(frozen=True)
class Violation:
    """One broken state invariant, with the offending magnitude."""

    invariant: str
    magnitude: float
    detail: str


@dataclass(frozen=True)
class ClampDiagnostics:
    clipped_mass: float
    renorm_factor: float


def point_mass(k0: int = 0, time: float = 0.0) -> PopulationState:
    """Whole population in class k0 (stored compacted: offset = k0)."""
    if k0 < 0:
        raise ValueError(f"class index must be >= 0, got {k0}")
    return PopulationState(np.array([1.0]), offset=int(k0), time=time)


def truncated_poisson(theta: float, tail_tol: float = 1e-10, time: float = 0.0) -> PopulationState:
    """Poisson(theta) profile truncated where the pmf drops below tail_tol.

    The window is sized so the last cell (always appended as zero after the
    cut) satisfies the tail invariant; weights renormalize to exactly 1.
    """
    if theta <= 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    k = 0
    pmf = [np.exp(-theta)]
    while pmf[-1] > tail_tol or k < theta + 1:
        k += 1
        pmf.append(pmf[-1] * theta / k)
        if k > 100000:
            raise ValueError("Poisson window did not close; theta too large?")
    w = np.array(pmf)
    w[-1] = 0.0  # keep the tail cell clear of the extension threshold
    w /= w.sum()
    state, _ = clamp_and_renormalize(PopulationState(w, offset=0, time=time))
    return state


def make_state(spec, tail_tol: float = 1e-10) -> PopulationState:
    """Build an initial state from a PopulationState or a profile string.

    Recognized strings: "point:K", "poisson:THETA", "weights:w0,w1,...".
    """
    if isinstance(spec, PopulationState):
        return spec.copy()
    if not isinstance(spec, str):
        raise ValueError(f"cannot interpret initial condition {spec!r}")
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "point":
        return point_mass(int(arg or 0))
    if kind == "poisson":
        return truncated_poisson(float(arg))
    if kind == "weights":
        w = np.array([float(x) for x in arg.split(",")], dtype=np.float64)
        state, _ = clamp_and_renormalize(PopulationState(w))
        return state
    raise ValueError(f"unknown initial-condition kind {kind!r}")


def validate_state(s: PopulationState) -> list[Violation]:
    """Check all state invariants; empty list iff the state is valid.

    Negativity (and any out-of-[0,1] weight) is reported before the sum
    check, and the sum check is applied to the negative-clipped weights so
    the two diagnostics stay independent.
    """
    out: list[Violation] = []
    w = s.weights
    if not np.all(np.isfinite(w)):
        bad = int(np.flatnonzero(~np.isfinite(w))[0])
        out.append(Violation("finite", float("nan"), f"non-finite weight at cell {bad}"))
        return out
    for j in np.flatnonzero(w < 0.0):
        out.append(
            Violation("nonnegative", float(-w[j]), f"weight[{int(j)}] = {w[j]:.17g} < 0")
        )
    for j in np.flatnonzero(w > 1.0):
        out.append(
            Violation("at_most_one", float(w[j] - 1.0), f"weight[{int(j)}] = {w[j]:.17g} > 1")
        )
    total = float(np.sum(np.maximum(w, 0.0)))
    if abs(total - 1.0) > SUM_TOL:
        out.append(Violation("unit_sum", abs(total - 1.0), f"sum = {total:.17g}"))
    if s.offset < 0:
        out.append(Violation("offset", float(-s.offset), f"offset = {s.offset} < 0"))
    if s.time < 0:
        out.append(Violation("time", float(-s.time), f"time = {s.time} < 0"))
    return out


def moments(s: PopulationState) -> Moments:
    """Exact mean and centered second moment of the class distribution.

    Computed in window coordinates first (numerically stable for large
    offsets) and shifted; m2 is shift-invariant.
    """
    w = s.weights
    j = np.arange(w.size, dtype=np.float64)
    m1_rel = float(j @ w)
    m2 = float(((j - m1_rel) ** 2) @ w)
    return Moments(m1=s.offset + m1_rel, m2=m2)


def zero_class_mass(s: PopulationState) -> float:
    """Mass of absolute class 0 (zero whenever the best class has clicked)."""
    return float(s.weights[0]) if s.offset == 0 else 0.0


def jensen_slack(s: PopulationState) -> float:
    """Slack of the moment inequality (1 - x0) * m2 >= x0 * m1^2.

    The inequality is Jensen's inequality applied to the distribution
    conditioned on class >= 1, with x0 the absolute class-0 mass; the slack
    is >= 0 (up to float roundoff) for every probability vector.
    """
    x0 = zero_class_mass(s)
    mom = moments(s)
    return (1.0 - x0) * mom.m2 - x0 * mom.m1 * mom.m1


def _force_exact_sum(w: np.ndarray) -> None:
    """Nudge one cell so np.sum(w) == 1.0 exactly.

    Absorbs the residual into a heavy pivot cell, then walks the pivot one
    ulp at a time toward the target. Because np.sum rounds intermediate
    partial sums, a single pivot can overshoot the representable total 1.0
    without ever producing it; when the residual flips sign the walk moves
    to the next-heaviest pivot, whose partial-sum path differs. In the
    (never observed) case that every tried pivot overshoots, the sum is
    left within a couple of ulp, inside the validation tolerance.
    """
    order = np.argsort(w)[::-1]
    for j in order[: min(12, w.size)]:
        r = float(w.sum()) - 1.0
        if r == 0.0:
            return
        w[j] -= r
        r = float(w.sum()) - 1.0
        if r == 0.0:
            return
        direction = -math.inf if r > 0 else math.inf
        first_sign = r > 0
        for _ in range(200):
            w[j] = np.nextafter(w[j], direction)
            r = float(w.sum()) - 1.0
            if r == 0.0:
                return
            if (r > 0) != first_sign:
                break  # skipped the lattice point: try another pivot


def clamp_and_renormalize(s: PopulationState) -> tuple[PopulationState, ClampDiagnostics]:
    """Clip negative cells to zero and rescale so the weights sum to 1.

    Rescaling is a global division (profile-preserving); the residual left
    by float division is absorbed into the largest cell so np.sum of the
    result is exactly 1.0. Raises ZeroMassError when nothing remains.
    """
    w = s.weights.astype(np.float64, copy=True)
    neg = w < 0.0
    clipped = float(-w[neg].sum()) if neg.any() else 0.0
    w[neg] = 0.0
    total = float(w.sum())
    if total <= 0.0:
        raise ZeroMassError("entire state clipped to zero mass")
    w /= total
    _force_exact_sum(w)
    return (
        PopulationState(w, offset=s.offset, time=s.time),
        ClampDiagnostics(clipped_mass=clipped, renorm_factor=1.0 / total),
    )
