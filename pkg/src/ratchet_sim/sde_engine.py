"""Euler-Maruyama stepping of the truncated mutation-class system.

One step applies, cell by cell (k is the absolute class index, j = k - offset
the window index, with w[-1] := 0 at the leading edge):

    w_j <- w_j + [alpha*(m1 - k)*w_j + lam*(w_{j-1} - w_j)] * dt + noise_j

where the resampling noise is built pairwise: one centered Gaussian of
variance dt per unordered pair of window cells, entering the lower-indexed
cell with + and the higher-indexed cell with -, scaled by sqrt(w_j*w_l/n).
The increments therefore sum to zero by construction and have covariance
(diag(w) - w w^T) * dt / n.

The drift telescopes to -lam * w[K-1]: the flux pushed past the window edge.
That rate is reported as drift_leak, and the window is grown by 50% whenever
the tail cell exceeds tail_tol, so the truncation error is always auditable.
Pairs touching cells below the noise floor of ModelParams are suppressed
(see there); without that, clipped near-empty cells inflate to the dt/n
scale and the window never stops growing.

After each step negative cells are clipped and the window renormalized.
Zero is absorbing for the leading cell (its drift and diffusion both vanish
there); the first step at which the post-clamp leading cell equals 0 is a
click, after which leading zero cells are compacted into the offset.

The hot loop is JIT-compiled; replicates are sequential internally and are
parallelized across independent substreams by the caller.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from .model_core import (
    ModelParams,
    PopulationState,
    ZeroMassError,
    clamp_and_renormalize,
)
from .proof_constants import DerivedConstants
from .streams import substream

__all__ = [
    "StepReport",
    "StoppingTimes",
    "TrajectoryRecord",
    "noise_increments",
    "euler_step",
    "detect_stops",
    "simulate",
]

# Reasons the jitted advance loop hands control back to Python.
_DONE, _CLICK, _EXTEND, _ZERO_MASS = 0, 1, 2, 3

_CHUNK_STEPS = 2048


@dataclass(frozen=True)
class StepReport:
    """Diagnostics for one step, or aggregated over a trajectory.

    For a single step drift_leak is the edge flux rate lam * w[K-1] and
    clipped_mass the mass clipped that step. Aggregated over a trajectory,
    drift_leak is the total leaked mass (sum of rate * dt), clipped_mass the
    total clipped mass, and window_size the largest window used.
    """

    drift_leak: float
    clipped_mass: float
    window_size: int


@dataclass
class StoppingTimes:
    """First grid times at which each detector fires (None if never).

    t0 is the first click. The other detectors are evaluated on the recorded
    sampling grid with m1 in absolute class units and x0 the current
    best-class weight.
    """

    t0: Optional[float] = None
    s_beta: Optional[float] = None
    h_lambda: Optional[float] = None
    t_xmax: Optional[float] = None
    t_delta_prime: Optional[float] = None
    t1_hit: Optional[float] = None

    def as_dict(self) -> dict[str, Optional[float]]:
        return {
            "t0": self.t0,
            "s_beta": self.s_beta,
            "h_lambda": self.h_lambda,
            "t_xmax": self.t_xmax,
            "t_delta_prime": self.t_delta_prime,
            "t1_hit": self.t1_hit,
        }


@dataclass
class TrajectoryRecord:
    """Sampled series plus click bookkeeping for one trajectory.

    x0 tracks the current best class (the leading window cell after click
    compaction); m1 and m2 are in absolute class units. window and
    drift_leak give the window size and edge-flux rate at each sample.
    """

    sample_times: np.ndarray
    x0_series: np.ndarray
    x1_series: np.ndarray
    m1_series: np.ndarray
    m2_series: np.ndarray
    window_series: np.ndarray
    leak_series: np.ndarray
    stops: StoppingTimes
    click_times: list[float]
    step_diagnostics: StepReport
    n_steps: int
    final_state: PopulationState
    noise0: Optional[np.ndarray] = None


@njit(cache=True, nogil=True)
def _pairwise_noise(w, scale, g, out, floor):
    """Add pairwise antisymmetric resampling noise into out.

    g holds one standard normal per pair (j, l), j < l, packed row-major;
    scale = sqrt(dt / n). Each pair contributes +v to cell j and exactly -v
    to cell l, so the total added mass is zero to rounding.

    A pair is active only if cell l carries at least `floor` mass and cell j
    does too (or j is the leading cell, which stays noise-driven at any mass
    so absorption at zero remains reachable). One Gaussian is consumed per
    pair regardless, keeping the stream layout independent of the state.
    """
    K = w.size
    s = np.sqrt(w)
    p = 0
    for j in range(K):
        sj = s[j]
        j_ok = j == 0 or w[j] >= floor
        for l in range(j + 1, K):
            if j_ok and w[l] >= floor:
                v = sj * s[l] * g[p] * scale
                out[j] += v
                out[l] -= v
            p += 1


@njit(cache=True, nogil=True)
def _advance(
    w,
    alpha,
    lam,
    n,
    dt,
    tail_tol,
    noise_floor,
    max_steps,
    countdown0,
    stride,
    rec,
    rec_leak,
    noise0_buf,
    rng,
):
    """Advance up to max_steps Euler steps on a fixed window.

    Stops early at a click (post-clamp leading cell exactly 0), when the
    tail cell exceeds tail_tol (caller extends the window), or when the
    whole window clips to zero mass. Every `stride`-th step (phased by
    countdown0) the post-step (x0, x1, m1_rel, m2) row is written to rec and
    the step's leak rate to rec_leak. If noise0_buf is non-empty the leading
    cell's noise increment of every step is stored there (used by the
    time-change comparison harness).

    Returns (w, steps, reason, n_rec, countdown, clip_total, leak_mass,
    last_leak_rate, last_clip).
    """
    K = w.size
    scale = np.sqrt(dt / n)
    cur = w.copy()
    buf = np.empty(K)
    countdown = countdown0
    n_rec = 0
    steps = 0
    clip_total = 0.0
    leak_mass = 0.0
    last_leak = 0.0
    last_clip = 0.0
    reason = _DONE
    record_noise0 = noise0_buf.size > 0
    n_pairs = K * (K - 1) // 2

    for _ in range(max_steps):
        m1r = 0.0
        for j in range(K):
            m1r += j * cur[j]
        leak_rate = lam * cur[K - 1]

        for j in range(K):
            prev = cur[j - 1] if j > 0 else 0.0
            buf[j] = cur[j] + ((alpha * (m1r - j) - lam) * cur[j] + lam * prev) * dt

        if record_noise0:
            x0_before = buf[0]
        g = rng.standard_normal(n_pairs)
        _pairwise_noise(cur, scale, g, buf, noise_floor)
        if record_noise0:
            noise0_buf[steps] = buf[0] - x0_before

        ssum = 0.0
        clip = 0.0
        for j in range(K):
            if buf[j] < 0.0:
                clip -= buf[j]
                buf[j] = 0.0
            ssum += buf[j]
        if ssum <= 0.0:
            reason = _ZERO_MASS
            break
        for j in range(K):
            buf[j] /= ssum
        for _ in range(10):
            r = -1.0
            for j in range(K):
                r += buf[j]
            if r == 0.0:
                break
            jmax = 0
            for j in range(1, K):
                if buf[j] > buf[jmax]:
                    jmax = j
            buf[jmax] -= r

        tmp = cur
        cur = buf
        buf = tmp
        steps += 1
        clip_total += clip
        leak_mass += leak_rate * dt
        last_leak = leak_rate
        last_clip = clip

        countdown -= 1
        if countdown == 0:
            m1p = 0.0
            for j in range(K):
                m1p += j * cur[j]
            m2p = 0.0
            for j in range(K):
                d = j - m1p
                m2p += d * d * cur[j]
            rec[n_rec, 0] = cur[0]
            rec[n_rec, 1] = cur[1] if K > 1 else 0.0
            rec[n_rec, 2] = m1p
            rec[n_rec, 3] = m2p
            rec_leak[n_rec] = leak_rate
            n_rec += 1
            countdown = stride

        if cur[0] == 0.0:
            reason = _CLICK
            break
        if cur[K - 1] > tail_tol:
            reason = _EXTEND
            break

    return cur, steps, reason, n_rec, countdown, clip_total, leak_mass, last_leak, last_clip


def noise_increments(
    s: PopulationState,
    dt: float,
    rng: np.random.Generator,
    n: float,
    noise_floor: float = 0.0,
) -> np.ndarray:
    """Draw one vector of pairwise resampling-noise increments.

    n is the effective population size entering the sqrt(w_j*w_l/n) scale.
    The returned increments sum to zero up to rounding and have covariance
    (diag(w) - w w^T) * dt / n. With the default noise_floor = 0 every pair
    is active; the stepper passes its sub-cell suppression floor here.
    """
    if dt <= 0 or n <= 0:
        raise ValueError("dt and n must be > 0")
    w = np.asarray(s.weights, dtype=np.float64)
    K = w.size
    out = np.zeros(K)
    g = rng.standard_normal(K * (K - 1) // 2)
    _pairwise_noise(w, np.sqrt(dt / n), g, out, noise_floor)
    return out


def _extended(w: np.ndarray) -> np.ndarray:
    """Grow the window by 50% (at least one cell), appending zeros."""
    grow = max(1, w.size // 2)
    return np.concatenate([w, np.zeros(grow)])


def euler_step(
    s: PopulationState, p: ModelParams, rng: np.random.Generator
) -> tuple[PopulationState, StepReport]:
    """One Euler step: drift + pairwise noise, window extension, clamp.

    The state must not be absorbed (leading cell > 0). A click can occur
    within the step; the returned state then carries the zeroed leading
    cell (compaction is simulate's job).
    """
    if not s.weights[0] > 0.0:
        raise ValueError("leading class already empty; compact before stepping")
    w = s.weights.astype(np.float64, copy=True)
    rec = np.empty((1, 4))
    rec_leak = np.empty(1)
    no_noise0 = np.empty(0)
    tail_tol = p.tail_tol if p.lam > 0 else 2.0  # nothing leaks without mutation
    w_out, steps, reason, _, _, clip, _, leak, _ = _advance(
        w, p.alpha, p.lam, p.n, p.dt, tail_tol, p.noise_floor,
        1, 2, 2, rec, rec_leak, no_noise0, rng,
    )
    if reason == _ZERO_MASS:
        raise ZeroMassError("entire state clipped to zero mass (dt too large)")
    if p.lam > 0 and w_out[-1] > p.tail_tol:
        w_out = _extended(w_out)
    state = PopulationState(w_out, offset=s.offset, time=s.time + p.dt)
    return state, StepReport(drift_leak=leak, clipped_mass=clip, window_size=w_out.size)


def _scan_stops(
    stops: StoppingTimes,
    times: np.ndarray,
    x0: np.ndarray,
    m1: np.ndarray,
    p: ModelParams,
    consts: Optional[DerivedConstants],
) -> None:
    """Fill any unset detectors with the first grid time satisfying them.

    Without derived constants (degenerate parameter sets) only the
    threshold-free detectors are evaluated.
    """
    thr_h = 2.0 * (p.lam + 1.0) / p.alpha if p.alpha > 0 else float("inf")

    def first(mask: np.ndarray) -> Optional[float]:
        idx = np.flatnonzero(mask)
        return float(times[idx[0]]) if idx.size else None

    if stops.h_lambda is None:
        stops.h_lambda = first(x0 * m1 * m1 <= thr_h)
    if stops.t1_hit is None:
        stops.t1_hit = first(x0 >= 1.0)
    if consts is None:
        return
    if stops.s_beta is None:
        stops.s_beta = first(m1 <= consts.beta)
    if stops.t_xmax is None:
        stops.t_xmax = first(x0 <= consts.x_max)
    if stops.t_delta_prime is None:
        stops.t_delta_prime = first(x0 <= consts.delta)


def detect_stops(
    tr: TrajectoryRecord, p: ModelParams, consts: Optional[DerivedConstants]
) -> StoppingTimes:
    """Stopping times of a (possibly partial) trajectory.

    Each detector fires at the first recorded grid time satisfying its
    predicate; the click time t0 is exact (clicks are checked every step,
    not just on the grid).
    """
    stops = StoppingTimes()
    stops.t0 = tr.click_times[0] if tr.click_times else None
    _scan_stops(stops, tr.sample_times, tr.x0_series, tr.m1_series, p, consts)
    return stops


def simulate(
    x_init: PopulationState,
    p: ModelParams,
    consts: Optional[DerivedConstants],
    record_every: int = 1,
    rng: Optional[np.random.Generator] = None,
    max_clicks: Optional[int] = None,
    stop_when: Optional[Callable[[StoppingTimes], bool]] = None,
    capture_noise0: bool = False,
) -> TrajectoryRecord:
    """Run the system from x_init until p.max_time, a click budget, or a stop rule.

    Samples (t, x0, x1, m1, m2) every record_every steps (plus the initial
    state). After each click the leading zero cells are compacted into the
    offset and the click time appended. stop_when, if given, is re-evaluated
    as the recorded grid grows and halts the run once it returns True; it is
    checked on the sampling grid only. rng defaults to substream(p.seed, 0).
    capture_noise0 additionally stores the per-step noise increment of the
    leading cell (the time-change comparison needs it); short runs only.
    """
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")
    if rng is None:
        rng = substream(p.seed, 0)
    state, _ = clamp_and_renormalize(x_init)
    w = state.weights
    offset = state.offset
    t_start = state.time
    # Compact any leading zeros supplied in the initial condition (not clicks).
    nz = int(np.flatnonzero(w > 0.0)[0])
    if nz:
        w = w[nz:].copy()
        offset += nz
    if p.lam > 0 and w[-1] > p.tail_tol:
        w = _extended(w)

    n_total = int(round(p.max_time / p.dt))
    dt = p.dt
    tail_tol = p.tail_tol if p.lam > 0 else 2.0  # nothing leaks without mutation

    def _moments_rel(wv: np.ndarray) -> tuple[float, float]:
        j = np.arange(wv.size, dtype=np.float64)
        m1r = float(j @ wv)
        return m1r, float(((j - m1r) ** 2) @ wv)

    m1r0, m20 = _moments_rel(w)
    times = [t_start]
    x0s = [float(w[0])]
    x1s = [float(w[1]) if w.size > 1 else 0.0]
    m1s = [offset + m1r0]
    m2s = [m20]
    windows = [w.size]
    leaks = [p.lam * float(w[-1])]
    click_times: list[float] = []
    noise0_chunks: list[np.ndarray] = []

    stops = StoppingTimes()
    stopped = stop_when(stops) if stop_when is not None else False
    steps_done = 0
    countdown = record_every
    clip_total = 0.0
    leak_total = 0.0
    max_window = w.size

    while steps_done < n_total and not stopped:
        budget = min(_CHUNK_STEPS, n_total - steps_done)
        max_rec = budget // record_every + 2
        rec = np.empty((max_rec, 4))
        rec_leak = np.empty(max_rec)
        noise0_buf = np.empty(budget) if capture_noise0 else np.empty(0)
        w, ksteps, reason, n_rec, countdown, clip, leak_mass, _, _ = _advance(
            w, p.alpha, p.lam, p.n, dt, tail_tol, p.noise_floor,
            budget, countdown, record_every, rec, rec_leak, noise0_buf, rng,
        )
        if capture_noise0:
            noise0_chunks.append(noise0_buf[:ksteps].copy())
        clip_total += clip
        leak_total += leak_mass
        max_window = max(max_window, w.size)

        if n_rec:
            # Recorded rows sit at the grid steps crossed within this chunk.
            first_grid = (steps_done // record_every + 1) * record_every
            grid = first_grid + record_every * np.arange(n_rec)
            times.extend((t_start + dt * grid).tolist())
            x0s.extend(rec[:n_rec, 0].tolist())
            x1s.extend(rec[:n_rec, 1].tolist())
            m1s.extend((offset + rec[:n_rec, 2]).tolist())
            m2s.extend(rec[:n_rec, 3].tolist())
            windows.extend([w.size] * n_rec)
            leaks.extend(rec_leak[:n_rec].tolist())
        steps_done += ksteps

        if reason == _ZERO_MASS:
            raise ZeroMassError(
                f"entire state clipped to zero mass at step {steps_done + 1} "
                f"(t = {t_start + dt * (steps_done + 1):.6g}); reduce dt"
            )
        if reason == _CLICK:
            click_times.append(t_start + dt * steps_done)
            lead = int(np.flatnonzero(w > 0.0)[0])
            offset += lead
            w = w[lead:].copy()
            if max_clicks is not None and len(click_times) >= max_clicks:
                break
        if p.lam > 0 and w[-1] > p.tail_tol:
            w = _extended(w)

        if stop_when is not None and n_rec:
            stops.t0 = click_times[0] if click_times else None
            _scan_stops(
                stops,
                np.asarray(times[-n_rec:]),
                np.asarray(x0s[-n_rec:]),
                np.asarray(m1s[-n_rec:]),
                p,
                consts,
            )
            stopped = stop_when(stops)

    record = TrajectoryRecord(
        sample_times=np.asarray(times),
        x0_series=np.asarray(x0s),
        x1_series=np.asarray(x1s),
        m1_series=np.asarray(m1s),
        m2_series=np.asarray(m2s),
        window_series=np.asarray(windows, dtype=np.int64),
        leak_series=np.asarray(leaks),
        stops=stops,
        click_times=click_times,
        step_diagnostics=StepReport(
            drift_leak=leak_total, clipped_mass=clip_total, window_size=max_window
        ),
        n_steps=steps_done,
        final_state=PopulationState(w, offset=offset, time=t_start + dt * steps_done),
    )
    record.stops = detect_stops(record, p, consts)
    if capture_noise0:
        record.noise0 = np.concatenate(noise0_chunks) if noise0_chunks else np.empty(0)
    return record
