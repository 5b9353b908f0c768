"""Simulation and verification lab for a Fleming-Viot model of Muller's ratchet."""

from .haigh import DiscretePopulation, haigh_click_time, haigh_generation
from .model_core import (
    ModelParams,
    Moments,
    PopulationState,
    ZeroMassError,
    clamp_and_renormalize,
    moments,
    point_mass,
    truncated_poisson,
    validate_state,
)
from .montecarlo import (
    BatchSpec,
    BatchSummary,
    BoundCheck,
    estimate_click_kernel,
    fit_exponential_tail,
    merge_summaries,
    run_batch,
    verify_m1_growth_bound,
    verify_recurrence,
)
from .proof_constants import (
    DerivedConstants,
    Staircase,
    brownian_exit_lower_bound,
    derive_constants,
    exponential_rate_bound,
    staircase,
)
from .reference_processes import (
    Diffusion1D,
    TimeChangeSample,
    coupled_compare,
    neutral_wf_exit,
    sample_y0_euler,
    sample_y0_exact,
)
from .sde_engine import (
    StepReport,
    StoppingTimes,
    TrajectoryRecord,
    detect_stops,
    euler_step,
    noise_increments,
    simulate,
)
from .streams import substream

__version__ = "0.1.0"
