"""Closed-form constants, the descent staircase, and Brownian exit bounds.

Everything here is a pure function of (n, alpha, lam) plus the two free
choices m (reference level for the mean) and the delta' candidate. Values
are deterministic IEEE double arithmetic, identical across runs.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .model_core import ModelParams

__all__ = [
    "DerivedConstants",
    "Staircase",
    "derive_constants",
    "staircase",
    "brownian_exit_penalty_terms",
    "brownian_exit_lower_bound",
    "exponential_rate_bound",
    "CONSTANT_FORMULAS",
]

# Formula strings for the CLI constants report, keyed by field name.
CONSTANT_FORMULAS = {
    "beta": "lam / alpha",
    "eps_bar": "1 / (10 * n * alpha)",
    "t3_prime": "1 / (30 * lam * alpha)",
    "p2": "exp(-1/60)",
    "m": "free choice (default 1)",
    "m_max_bound": "m + lam * t3_prime / (4 * n) + eps_bar / 6",
    "mu": "min(eps_bar / (6 * m_max_bound), eps_bar / 4, 1/10)",
    "delta_cap": "min(1/10, eps_bar / m)",
    "delta": "min(delta_prime_candidate, delta_cap)",
    "eps": "delta * m",
    "delta_inf": "min(delta, eps^2 * alpha / (4 * (lam + 1)))",
    "x_max": "max(9/10, (3*lam + 5*alpha) / (5*(lam + alpha)), 1 - 2/lam)",
    "t1": "8 / lam^2",
    "eps0": "ln(2 / (1 - exp(-n))) / (2 * alpha * n)",
    "beta_prime": "beta + lam * t1 + eps0",
    "p_init": "(1 - exp(-n)) / 2",
    "eps_tilde": "ln(4) / (2 * alpha * n)",
    "a": "(1 - x_max) / 2",
    "mu_tilde": "(1 - x_max) / 2",
    "d_n": "eps_tilde + n * lam / (a * beta_prime)",
    "kappa": "min(1/25, beta_prime * mu_tilde / (25 + 10 * ln(6)))",
    "rho_sec6": "max(eps / delta, 2 * lam / alpha)",
}


@dataclass(frozen=True)
class DerivedConstants:
    """Named constants of the descent-and-click construction.

    All fields are strictly positive; delta <= delta_cap and kappa <= 1/25.
    """

    beta: float
    eps_bar: float
    t3_prime: float
    p2: float
    m: float
    m_max_bound: float
    mu: float
    delta_cap: float
    delta: float
    eps: float
    delta_inf: float
    x_max: float
    t1: float
    eps0: float
    beta_prime: float
    p_init: float
    eps_tilde: float
    a: float
    mu_tilde: float
    d_n: float
    kappa: float
    rho_sec6: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in CONSTANT_FORMULAS}


@dataclass(frozen=True)
class Staircase:
    """Descent schedule for the best-class frequency.

    deltas[k] is the k-th downward step, step_times[k] = 25 * deltas[k]^2 the
    clock allotted to it, and thetas[k] the running ceiling imposed on the
    population mean during the step. k_bar is the number of steps needed to
    come within delta of zero; from halving_onset onward every step is
    exactly half the remaining distance.
    """

    x_start: float
    target: float
    deltas: np.ndarray
    step_times: np.ndarray
    thetas: np.ndarray
    remaining_before: np.ndarray
    k_bar: int
    halving_onset: int


def derive_constants(
    p: ModelParams, m: float = 1.0, delta_prime_candidate: float = 1.0
) -> DerivedConstants:
    """Evaluate every derived constant by direct substitution."""
    if m <= 0:
        raise ValueError(f"m must be > 0, got {m}")
    if delta_prime_candidate <= 0:
        raise ValueError(f"delta' candidate must be > 0, got {delta_prime_candidate}")
    n, alpha, lam = p.n, p.alpha, p.lam
    if n <= 0 or alpha <= 0 or lam <= 0:
        raise ValueError(
            f"constants need n, alpha, lam all > 0, got ({n}, {alpha}, {lam})"
        )

    beta = lam / alpha
    eps_bar = 1.0 / (10.0 * n * alpha)
    t3_prime = 1.0 / (30.0 * lam * alpha)
    p2 = math.exp(-1.0 / 60.0)
    # Deterministic stand-in for the path-dependent mean ceiling: the
    # quarter-clock over [0, t3'] is at most t3'/(4n).
    m_max_bound = m + lam * t3_prime / (4.0 * n) + eps_bar / 6.0
    mu = min(eps_bar / (6.0 * m_max_bound), eps_bar / 4.0, 0.1)
    delta_cap = min(0.1, eps_bar / m)
    delta = min(delta_prime_candidate, delta_cap)
    eps = delta * m
    delta_inf = min(delta, eps * eps * alpha / (4.0 * (lam + 1.0)))
    x_max = max(0.9, (3.0 * lam + 5.0 * alpha) / (5.0 * (lam + alpha)), 1.0 - 2.0 / lam)
    t1 = 8.0 / (lam * lam)
    eps0 = math.log(2.0 / (1.0 - math.exp(-n))) / (2.0 * alpha * n)
    beta_prime = beta + lam * t1 + eps0
    p_init = (1.0 - math.exp(-n)) / 2.0
    eps_tilde = math.log(4.0) / (2.0 * alpha * n)
    a = (1.0 - x_max) / 2.0
    mu_tilde = (1.0 - x_max) / 2.0
    d_n = eps_tilde + n * lam / (a * beta_prime)
    kappa = min(1.0 / 25.0, beta_prime * mu_tilde / (25.0 + 10.0 * math.log(6.0)))
    rho_sec6 = max(eps / delta, 2.0 * lam / alpha)

    return DerivedConstants(
        beta=beta,
        eps_bar=eps_bar,
        t3_prime=t3_prime,
        p2=p2,
        m=m,
        m_max_bound=m_max_bound,
        mu=mu,
        delta_cap=delta_cap,
        delta=delta,
        eps=eps,
        delta_inf=delta_inf,
        x_max=x_max,
        t1=t1,
        eps0=eps0,
        beta_prime=beta_prime,
        p_init=p_init,
        eps_tilde=eps_tilde,
        a=a,
        mu_tilde=mu_tilde,
        d_n=d_n,
        kappa=kappa,
        rho_sec6=rho_sec6,
    )


# Largest per-step product delta_k * theta_k for which the dip penalty of
# the exit bound stays below 1/3 with a 2% margin: the penalty is
# sqrt(2/pi) * (0.2 + 5 * delta * theta) because s_k = 25 * delta_k^2.
_STEP_PRODUCT_BUDGET = 0.98 * (math.sqrt(math.pi / 2.0) / 3.0 - 0.2) / 5.0


def staircase(x_start: float, c: DerivedConstants, max_steps: int = 5_000_000) -> Staircase:
    """Run the step-size recursion from x_start down to c.delta.

    Step k (1-based) descends by

        delta_k = min(budget / theta_hat_k, delta_sup, 1/(25 beta'),
                      half of the remaining distance),

    with s_k = 25 * delta_k^2 and the running mean ceiling
    theta_k = beta' + k*eps_tilde + (n*lam/a) * sum_j s_j / remaining_j.
    theta_hat_k is a one-step upper bound on theta_k available before the
    step is chosen; `budget` and delta_sup are the largest per-step values
    that keep both exit-bound penalty terms below 1/3 with a 2% margin, so
    every step of the schedule satisfies the dip and ceiling conditions at
    its true theta_k. The resulting caps also sit below 1/(25 beta') and
    keep theta_k <= beta' + d_n * k.

    Dividing the budget by the running ceiling (instead of the a-priori
    linear bound beta' + d_n * k) is what makes the recursion terminate at
    practical scale: the a-priori form descends only like
    (kappa/d_n) * log k, which at reference parameters would need ~e^700
    steps to cover an order-one distance.
    """
    target = c.delta
    if x_start > c.x_max:
        raise ValueError(f"x_start = {x_start} exceeds x_max = {c.x_max}")
    if x_start < target:
        raise ValueError(f"x_start = {x_start} is below the target delta = {target}")
    # n*lam/a reconstructed from d_n so this stays a pure function of c.
    n_lam_over_a = (c.d_n - c.eps_tilde) * c.beta_prime
    # Ceiling penalty < 1/3 (with margin) requires
    # mu_tilde/(5 delta) - 5 delta*theta >= sqrt(2 log 6) / 0.98.
    delta_sup = c.mu_tilde / (
        5.0 * (math.sqrt(2.0 * math.log(6.0)) / 0.98 + 5.0 * _STEP_PRODUCT_BUDGET)
    )
    cap25 = 1.0 / (25.0 * c.beta_prime)

    deltas: list[float] = []
    s_list: list[float] = []
    thetas: list[float] = []
    rem_before: list[float] = []
    remaining = x_start
    theta_sum = 0.0
    theta_hat = c.beta_prime
    halving_onset = 0
    k = 0
    while remaining > target:
        k += 1
        if k > max_steps:
            raise RuntimeError(f"staircase did not terminate within {max_steps} steps")
        # Candidate step from the previous ceiling, this step's ceiling bound
        # under that candidate, then the actual step from the tightened bound.
        half = 0.5 * remaining
        d_cand = min(_STEP_PRODUCT_BUDGET / theta_hat, delta_sup, cap25, half)
        theta_step = theta_hat + c.eps_tilde + n_lam_over_a * 25.0 * d_cand * d_cand / (
            remaining - d_cand
        )
        cap = min(_STEP_PRODUCT_BUDGET / theta_step, delta_sup, cap25)
        if cap <= half:
            dk = cap
            halving_onset = k  # last step that used the budget cap
        else:
            dk = half
        sk = 25.0 * (dk * dk)
        rem_before.append(remaining)
        remaining -= dk
        theta_sum += sk / remaining
        theta_hat = theta_hat + c.eps_tilde + n_lam_over_a * sk / remaining
        deltas.append(dk)
        s_list.append(sk)
        thetas.append(c.beta_prime + k * c.eps_tilde + n_lam_over_a * theta_sum)

    return Staircase(
        x_start=float(x_start),
        target=float(target),
        deltas=np.array(deltas),
        step_times=np.array(s_list),
        thetas=np.array(thetas),
        remaining_before=np.array(rem_before),
        k_bar=k,
        halving_onset=halving_onset,
    )


def brownian_exit_penalty_terms(
    c: float, t: float, delta_tilde: float, mu_tilde: float
) -> tuple[float, float]:
    """The two penalty terms of the drifted-Brownian exit bound.

    term1 penalizes failing to dip below -delta_tilde by time t; term2
    penalizes exceeding mu_tilde. The Gaussian-tail exponent is only
    informative when mu_tilde/sqrt(t) >= c*sqrt(t); below that the term
    saturates at its ceiling 2, which keeps the bound valid and monotone.
    """
    if t <= 0 or delta_tilde <= 0 or mu_tilde <= 0 or c < 0:
        raise ValueError("need t, delta_tilde, mu_tilde > 0 and c >= 0")
    rt = math.sqrt(t)
    term1 = math.sqrt(2.0 / math.pi) * (delta_tilde / rt + c * rt)
    u = mu_tilde / rt - c * rt
    term2 = 2.0 * math.exp(-0.5 * max(u, 0.0) ** 2)
    return term1, term2


def brownian_exit_lower_bound(
    c: float, t: float, delta_tilde: float, mu_tilde: float
) -> float:
    """Lower bound on P(inf (cs+V_s) <= -delta_tilde and sup <= mu_tilde).

    Returns the raw value 1 - term1 - term2, which may be negative; clamp at
    zero when using it as a probability bound.
    """
    term1, term2 = brownian_exit_penalty_terms(c, t, delta_tilde, mu_tilde)
    return 1.0 - term1 - term2


def exponential_rate_bound(p_bar: float, k_bar: float) -> float:
    """Exponential-moment rate -log(1 - p_bar) / k_bar."""
    if not 0.0 < p_bar < 1.0:
        raise ValueError(f"p_bar must be in (0, 1), got {p_bar}")
    if k_bar <= 0:
        raise ValueError(f"k_bar must be > 0, got {k_bar}")
    return -math.log1p(-p_bar) / k_bar
