"""One-dimensional reference diffusions and shared-noise comparisons.

Three tools used to corner the best-class frequency:

* an exact time-change sampler for the reference process
  dY = dt + 2*sqrt(Y) dW started at delta, built from the closed geometric
  Brownian path Ytilde(t) = delta * exp(-t + 2 W(t)): with
  D(t) = int_0^t Ytilde, the process Ytilde(rho(t)) solves the SDE and its
  hitting time of 0 is exactly D(inf), which is finite path by path and
  scales linearly in delta;
* a plain Euler sampler for the same process (absorbed at the first
  crossing of zero), whose law must agree with the exact sampler;
* a shared-noise Euler coupling harness for ordered drift pairs, plus the
  neutral Wright-Fisher exit sampler.

Scalar samplers take a Generator and are deterministic per call; the batch
helpers used by the verification suites run one substream per sample.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from . import sde_engine
from .model_core import ModelParams, PopulationState
from .proof_constants import DerivedConstants
from .streams import substream

__all__ = [
    "Diffusion1D",
    "TimeChangeSample",
    "ExitRecord",
    "CoupledPaths",
    "neutral_wright_fisher",
    "drifted_wright_fisher",
    "sample_y0_exact",
    "sample_y0_euler",
    "y0_exact_batch",
    "y0_euler_batch",
    "coupled_compare",
    "neutral_wf_exit",
    "time_changed_comparison",
]

# Relative level of Ytilde at which the exact sampler stops integrating.
_EXACT_STOP_REL = 1e-12

# 99th percentile of int_0^inf exp(-t + 2 W_t) dt, Monte Carlo estimate from
# a 1e6-path pre-build run (grid 1e-3); used to convert the leftover mass at
# the stopping level into a truncation bound on the hitting time.
_TAIL_MULTIPLIER_Q99 = 6373.0


@dataclass(frozen=True)
class Diffusion1D:
    """A scalar diffusion dY = drift(t, y) dt + diffusion(y) dW on a domain.

    diffusion must be 1/2-Hoelder on [lo, hi] (documented per instance, not
    checked). Endpoints flagged absorbing freeze the path on contact.
    """

    drift: Callable[[float, float], float]
    diffusion: Callable[[float], float]
    lo: float = 0.0
    hi: float = 1.0
    absorb_lo: bool = True
    absorb_hi: bool = True


def neutral_wright_fisher(n: float) -> Diffusion1D:
    """Driftless resampling diffusion dY = sqrt(y(1-y)/n) dW on [0, 1]."""
    root = 1.0 / math.sqrt(n)
    return Diffusion1D(
        drift=lambda t, y: 0.0,
        diffusion=lambda y: root * math.sqrt(max(y * (1.0 - y), 0.0)),
    )


def drifted_wright_fisher(n: float, drift_rate: float) -> Diffusion1D:
    """Constant-drift resampling diffusion dY = c dt + sqrt(y(1-y)/n) dW."""
    root = 1.0 / math.sqrt(n)
    return Diffusion1D(
        drift=lambda t, y: drift_rate,
        diffusion=lambda y: root * math.sqrt(max(y * (1.0 - y), 0.0)),
    )


@dataclass(frozen=True)
class TimeChangeSample:
    """One sampled hitting time of 0 for the reference process.

    t_prime_0 is the hitting time, sup_path the running supremum of the
    path, truncation_error_bound a high-confidence bound on the time mass
    ignored by stopping the integration at the truncation level (zero for
    the Euler sampler, which is exact-in-time once it crosses).
    """

    t_prime_0: float
    sup_path: float
    truncation_error_bound: float


@dataclass(frozen=True)
class ExitRecord:
    """Exit of the neutral diffusion: which endpoint (0/1, None if censored)."""

    endpoint: Optional[int]
    time: Optional[float]


@dataclass(frozen=True)
class CoupledPaths:
    times: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    violation_count: int


@njit(cache=True, nogil=True)
def _y0_exact_core(h, log_stop, rng):
    """Geometric path exp(-t + 2W) on grid h until it falls below log_stop.

    Returns (d, sup, y_stop) for the unit-start path: d the trapezoid
    integral of the path, sup its running supremum, y_stop the level at the
    stop. Callers multiply all three by their start value.
    """
    logy = 0.0
    prev = 1.0
    d = 0.0
    sup = 1.0
    sq2 = 2.0 * np.sqrt(h)
    while logy > log_stop:
        logy += -h + sq2 * rng.standard_normal()
        y = np.exp(logy)
        d += 0.5 * h * (prev + y)
        if y > sup:
            sup = y
        prev = y
    return d, sup, prev


@njit(cache=True, nogil=True)
def _y0_euler_core(delta, dt, max_steps, rng):
    """Euler path of dY = dt + 2 sqrt(Y) dW from delta, absorbed at 0.

    Returns (steps, sup, absorbed); steps == max_steps with absorbed False
    means the cap was hit (censored sample).
    """
    y = delta
    sup = delta
    sq = 2.0 * np.sqrt(dt)
    steps = 0
    while steps < max_steps:
        y += dt + sq * np.sqrt(y) * rng.standard_normal()
        steps += 1
        if y <= 0.0:
            return steps, sup, True
        if y > sup:
            sup = y
    return steps, sup, False


@njit(cache=True, nogil=True)
def _neutral_wf_core(y0, n, dt, max_steps, rng):
    """Euler path of dY = sqrt(y(1-y)/n) dW, clamped, absorbed at 0 or 1.

    Returns (endpoint, steps); endpoint -1 means still interior at the cap.
    """
    y = y0
    root = np.sqrt(dt / n)
    for step in range(1, max_steps + 1):
        y += np.sqrt(max(y * (1.0 - y), 0.0)) * root * rng.standard_normal()
        if y <= 0.0:
            return 0, step
        if y >= 1.0:
            return 1, step
    return -1, max_steps


def sample_y0_exact(
    delta: float, rng: np.random.Generator, h: float = 1e-3
) -> TimeChangeSample:
    """Exact (time-change) sample of the hitting time of 0 from delta.

    Integrates the geometric path on grid h until it has decayed by a factor
    _EXACT_STOP_REL; the ignored tail is bounded by the leftover level times
    a pinned high quantile of the unit integral. Every sample is finite.
    """
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    d, sup, y_stop = _y0_exact_core(h, math.log(_EXACT_STOP_REL), rng)
    return TimeChangeSample(
        t_prime_0=delta * d,
        sup_path=delta * sup,
        truncation_error_bound=delta * y_stop * _TAIL_MULTIPLIER_Q99,
    )


def sample_y0_euler(
    delta: float,
    dt: float,
    rng: np.random.Generator,
    max_time: Optional[float] = None,
) -> TimeChangeSample:
    """Euler sample of the same hitting time, absorbed at the first crossing.

    The hitting-time law is heavy tailed (no finite mean), so callers doing
    batch statistics should pass max_time and handle the censored samples;
    without a cap the walk is still absorbed almost surely.
    """
    if delta <= 0 or dt <= 0:
        raise ValueError("delta and dt must be > 0")
    cap = 2**62 if max_time is None else int(math.ceil(max_time / dt))
    steps, sup, absorbed = _y0_euler_core(delta, dt, cap, rng)
    if not absorbed:
        raise RuntimeError(f"path not absorbed within max_time = {max_time}")
    return TimeChangeSample(
        t_prime_0=steps * dt, sup_path=sup, truncation_error_bound=0.0
    )


def y0_exact_batch(
    delta: float, n_samples: int, seed: int, h: float = 1e-3
) -> tuple[np.ndarray, np.ndarray]:
    """(hitting times, path suprema) from n_samples independent substreams."""
    t = np.empty(n_samples)
    sup = np.empty(n_samples)
    log_stop = math.log(_EXACT_STOP_REL)
    for i in range(n_samples):
        d, s, _ = _y0_exact_core(h, log_stop, substream(seed, i))
        t[i] = delta * d
        sup[i] = delta * s
    return t, sup


def y0_euler_batch(
    delta: float, dt: float, n_samples: int, seed: int, t_cap: float
) -> tuple[np.ndarray, np.ndarray]:
    """(hitting times censored at t_cap, absorbed mask) for n_samples paths."""
    t = np.empty(n_samples)
    absorbed = np.empty(n_samples, dtype=bool)
    cap = int(math.ceil(t_cap / dt))
    for i in range(n_samples):
        steps, _, ok = _y0_euler_core(delta, dt, cap, substream(seed, i))
        # censored samples sit exactly at t_cap so that capped comparisons
        # against other samplers align their atoms
        t[i] = min(steps * dt, t_cap)
        absorbed[i] = ok
    return t, absorbed


def coupled_compare(
    d1: Diffusion1D,
    d2: Diffusion1D,
    y1_0: float,
    y2_0: float,
    horizon: float,
    dt: float,
    rng: np.random.Generator,
    tol_order: float = 1e-9,
) -> CoupledPaths:
    """Euler both diffusions on identical Brownian increments and count
    grid points where the ordering y1 <= y2 fails by more than tol_order.

    Caller asserts drift(d1) <= drift(d2) pointwise; the initial ordering is
    checked here. Paths are clamped to their domains; absorbing endpoints
    freeze them.
    """
    if y1_0 > y2_0:
        raise ValueError(f"initial ordering violated: {y1_0} > {y2_0}")
    n_steps = int(round(horizon / dt))
    sq = math.sqrt(dt)
    y1 = np.empty(n_steps + 1)
    y2 = np.empty(n_steps + 1)
    y1[0], y2[0] = y1_0, y2_0
    a, b = y1_0, y2_0
    frozen1 = frozen2 = False
    violations = 0
    t = 0.0
    g = rng.standard_normal(n_steps)
    for i in range(n_steps):
        db = g[i] * sq
        if not frozen1:
            a = a + d1.drift(t, a) * dt + d1.diffusion(a) * db
            a = min(max(a, d1.lo), d1.hi)
            frozen1 = (a == d1.lo and d1.absorb_lo) or (a == d1.hi and d1.absorb_hi)
        if not frozen2:
            b = b + d2.drift(t, b) * dt + d2.diffusion(b) * db
            b = min(max(b, d2.lo), d2.hi)
            frozen2 = (b == d2.lo and d2.absorb_lo) or (b == d2.hi and d2.absorb_hi)
        t += dt
        y1[i + 1] = a
        y2[i + 1] = b
        if a > b + tol_order:
            violations += 1
    times = dt * np.arange(n_steps + 1)
    return CoupledPaths(times=times, y1=y1, y2=y2, violation_count=violations)


def neutral_wf_exit(
    delta_inf: float,
    n: float,
    horizon: float,
    dt: float,
    rng: np.random.Generator,
) -> ExitRecord:
    """Run the driftless resampling diffusion from delta_inf to absorption.

    Reports which endpoint was hit and when; both None if the path is still
    interior at the horizon. Starting exactly at an endpoint returns it at
    time 0.
    """
    if not 0.0 <= delta_inf <= 1.0:
        raise ValueError(f"start must lie in [0, 1], got {delta_inf}")
    if delta_inf == 0.0:
        return ExitRecord(endpoint=0, time=0.0)
    if delta_inf == 1.0:
        return ExitRecord(endpoint=1, time=0.0)
    max_steps = int(round(horizon / dt))
    endpoint, steps = _neutral_wf_core(delta_inf, n, dt, max_steps, rng)
    if endpoint < 0:
        return ExitRecord(endpoint=None, time=None)
    return ExitRecord(endpoint=int(endpoint), time=steps * dt)


def time_changed_comparison(
    x_init: PopulationState,
    p: ModelParams,
    consts: DerivedConstants,
    horizon: float,
    rng: np.random.Generator,
    x0_floor: float = 1e-3,
    tol_order: float = 1e-9,
) -> tuple[int, int]:
    """Check the best-class weight against the reference process on the
    quarter clock, reusing the engine's own noise.

    Runs the full system from x_init (best-class weight at most delta),
    reconstructs the driving Brownian increments of the leading cell from
    the recorded per-step noise, advances the reference process on the
    transformed clock du = (1 - x0)/(4n) dt with those increments, and
    counts grid points where x0 exceeds the reference by more than
    tol_order. The comparison is only claimed while x0*m1 <= 2*eps_bar and
    x0 <= delta + mu hold, and stops once x0 falls below x0_floor (the
    increment reconstruction divides by sqrt(x0)).

    Returns (points checked, violations).
    """
    if x_init.weights[0] > consts.delta:
        raise ValueError("initial best-class weight must be <= delta")
    params = ModelParams(
        n=p.n, alpha=p.alpha, lam=p.lam, dt=p.dt, tail_tol=p.tail_tol,
        max_time=horizon, seed=p.seed,
    )
    tr = sde_engine.simulate(
        x_init, params, consts, record_every=1, rng=rng, max_clicks=1,
        capture_noise0=True,
    )
    x0 = tr.x0_series
    m1 = tr.m1_series
    noise0 = tr.noise0
    y = consts.delta
    checked = 0
    violations = 0
    for i in range(len(noise0)):
        x_prev = x0[i]
        if x_prev < x0_floor:
            break
        if x_prev * m1[i] > 2.0 * consts.eps_bar or x_prev > consts.delta + consts.mu:
            break
        du = 0.25 * (1.0 - x_prev) * p.dt / p.n
        dw = noise0[i] / (2.0 * math.sqrt(x_prev))
        y = max(y + du + 2.0 * math.sqrt(max(y, 0.0)) * dw, 0.0)
        checked += 1
        if x0[i + 1] > y + tol_order:
            violations += 1
    return checked, violations
