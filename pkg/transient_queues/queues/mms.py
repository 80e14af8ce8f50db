"""
Transient closed forms for M/M/infinity, M/M/s and M/M/s/K queues at an
exponential time.

The M/M/s law is built around the reference point s: hitting transforms below
s come from the M/M/infinity queue (Kummer functions), above s from the M/M/1
busy period, and paths that never reach s are handled by conditioning on the
running infimum (M/M/1 behaviour) or supremum (Erlang loss behaviour).
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import comb, gammaln

from transient_queues.errors import CertificationError, InputError, TruncationError
from transient_queues.models.spec import BirthDeathSpec, RateMap
from transient_queues.transforms.core import (
    LstValue,
    QLike,
    TransformArgument,
    bd_hitting_lst,
    bd_hitting_table,
    kummer_m1,
    mm1_busy_period_lst,
)

# Configure logging
logger = logging.getLogger(__name__)

# Beyond these the alternating double sum is not attempted
CLOSED_FORM_MAX_RHO = 30.0
CLOSED_FORM_MAX_STATE = 40

# Accepted absolute rounding bound of the alternating double sum
CLOSED_FORM_ERROR_BOUND = 1e-11

# Relative error of each Kummer value entering the bound
KUMMER_REL_ERROR = 1e-15

PROBABILITY_SLACK = 1e-10
DECOMPOSITION_TOL = 1e-7


class QueueModelError(InputError):
    """Exception raised for invalid queue parameters or states."""
    pass


class QueueNumericsError(CertificationError):
    """Exception raised when a closed form loses accuracy or fails a cross-check."""
    pass


@dataclass(frozen=True)
class MmsParams:
    """M/M/s (or M/M/s/K when `capacity` is set) queue parameters."""

    lam: float
    mu: float
    servers: int = 1
    capacity: Optional[int] = None
    truncation: int = 200

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise QueueModelError(f"Rates must be positive, got lam={self.lam}, mu={self.mu}")
        if self.servers < 1:
            raise QueueModelError(f"Server count must be at least 1, got {self.servers}")
        if self.capacity is not None and self.capacity <= self.servers:
            raise QueueModelError(
                f"Capacity {self.capacity} must exceed the server count {self.servers}"
            )

    @property
    def rho(self) -> float:
        return self.lam / self.mu


def mms_to_birth_death(params: MmsParams) -> BirthDeathSpec:
    """Birth-death chain of the queue-length process."""
    return BirthDeathSpec(
        birth=RateMap.constant(params.lam),
        death=RateMap.linear_capped(params.mu, params.servers),
        lower=0,
        upper=params.capacity,
        truncation=params.truncation,
    )


def mminfty_spec(params: MmsParams, top: int) -> BirthDeathSpec:
    """Birth-death chain of the M/M/infinity queue truncated at `top`."""
    return BirthDeathSpec(birth=RateMap.constant(params.lam), death=RateMap.linear(params.mu),
                          lower=0, truncation=top)


def _finish(value: complex, argument: TransformArgument, what: str) -> LstValue:
    if not argument.is_real:
        return value
    value = value.real
    if value < -PROBABILITY_SLACK or value > 1.0 + PROBABILITY_SLACK:
        error_msg = f"{what} evaluated to {value!r}, outside [0, 1]"
        logger.error(error_msg)
        raise QueueNumericsError(error_msg)
    return min(max(value, 0.0), 1.0)


def _log_poisson_weights(rho: float, top: int) -> np.ndarray:
    levels = np.arange(top + 1)
    return levels * math.log(rho) - gammaln(levels + 1)


def _mminfty_top(params: MmsParams, state: int) -> int:
    return int(max(state, params.rho) + 12.0 * math.sqrt(params.rho + 1.0) + 40)


def _closed_form_point_pmf(k: int, s: int, params: MmsParams,
                           argument: TransformArgument) -> Tuple[complex, float]:
    """Alternating double sum and a bound on its rounding error."""
    q = argument.scalar
    mu = params.mu
    rho = params.rho
    real_terms: List[float] = []
    imag_terms: List[float] = []
    magnitude = 0.0
    for j in range(0, k + 1):
        width = k + s - 2 * j
        prefactor = comb(k, j, exact=True) * math.exp((s - j) * math.log(rho) - gammaln(s - j + 1))
        for m in range(0, width + 1):
            sign = -1.0 if m % 2 else 1.0
            rate = q + (j + m) * mu
            term = (sign * prefactor * comb(width, m, exact=True) * (q / rate)
                    * kummer_m1(rate / mu + 1.0, -rho))
            term = complex(term)
            real_terms.append(term.real)
            imag_terms.append(term.imag)
            magnitude += abs(term)
    value = complex(math.fsum(real_terms), math.fsum(imag_terms))
    return value, KUMMER_REL_ERROR * magnitude


def _recursion_point_pmf(k: int, s: int, params: MmsParams,
                         argument: TransformArgument) -> complex:
    """P_k(Q(e_q) = s) = E_k[e^{-q tau_s}] pi_s / sum_j pi_j E_j[e^{-q tau_s}]."""
    top = _mminfty_top(params, s)
    spec = mminfty_spec(params, top)
    table = bd_hitting_table(spec, s, argument)
    log_weights = _log_poisson_weights(params.rho, top)
    weights = np.exp(log_weights - log_weights.max())
    terms = weights * table
    if abs(terms[-1]) > 1e-16 * abs(terms.sum()):
        raise TruncationError(f"M/M/infinity recursion not converged at truncation {top}")
    return complex(table[k] * weights[s] / terms.sum())


def closed_form_available(k: int, s: int, params: MmsParams) -> bool:
    """Whether the double-sum formula is attempted for (k, s)."""
    return params.rho <= CLOSED_FORM_MAX_RHO and s <= CLOSED_FORM_MAX_STATE


@lru_cache(maxsize=4096)
def _point_pmf(k: int, s: int, params: MmsParams, argument: TransformArgument) -> complex:
    if closed_form_available(k, s, params):
        value, error_bound = _closed_form_point_pmf(k, s, params, argument)
        if error_bound <= CLOSED_FORM_ERROR_BOUND:
            return value
        logger.warning(f"Closed form for P_{k}(Q(e_q)={s}) has rounding bound {error_bound:.1e}; "
                       f"using the birth-death recursion")
    else:
        logger.warning(f"Closed form unavailable for rho={params.rho}, s={s}; "
                       f"using the birth-death recursion")
    return _recursion_point_pmf(k, s, params, argument)


def mminfty_point_pmf(k: int, s: int, params: MmsParams, q: QLike) -> LstValue:
    """
    P_k(Q(e_q) = s) for the M/M/infinity queue, 0 <= k <= s.

    The binomial-plus-Poisson structure of Q(t) gives a double sum over
    j <= k and m <= k + s - 2j of Kummer values M(1, q/mu + j + m + 1, -rho),
    summed with compensated summation. When rho or s is large, or the rounding
    bound exceeds 1e-11, the birth-death recursion is used instead.

    Raises:
        QueueModelError: If not 0 <= k <= s.
        QueueNumericsError: If the result leaves [0, 1].
    """
    if not 0 <= k <= s:
        raise QueueModelError(f"M/M/infinity point pmf needs 0 <= k <= s, got k={k}, s={s}")
    argument = TransformArgument.coerce(q)
    return _finish(_point_pmf(k, s, params, argument), argument, f"P_{k}(Q(e_q) = {s})")


def mminfty_hitting_lst(k: int, s: int, params: MmsParams, q: QLike) -> LstValue:
    """
    E_k[e^{-q tau_s}] for the upward passage of the M/M/infinity queue, k <= s.

    Ratio of the point pmfs P_k(Q(e_q) = s) / P_s(Q(e_q) = s).
    """
    if not 0 <= k <= s:
        raise QueueModelError(f"M/M/infinity hitting transform needs 0 <= k <= s, got k={k}, s={s}")
    argument = TransformArgument.coerce(q)
    if k == s:
        return 1.0 if argument.is_real else complex(1.0)
    denominator = _point_pmf(s, s, params, argument)
    if abs(denominator) < 1e-300:
        error_msg = f"P_{s}(Q(e_q) = {s}) underflows for rho={params.rho}, q={argument.scalar}"
        logger.error(error_msg)
        raise QueueNumericsError(error_msg)
    value = _point_pmf(k, s, params, argument) / denominator
    return _finish(value, argument, f"E_{k}[exp(-q tau_{s})]")


@lru_cache(maxsize=256)
def _upward_table(params: MmsParams, argument: TransformArgument, s: int) -> np.ndarray:
    """H[j, l] = E_j[e^{-q tau_l}] for 0 <= j <= l <= s (M/M/infinity)."""
    table = np.zeros((s + 1, s + 1), dtype=complex)
    for l in range(s + 1):
        for j in range(l + 1):
            table[j, l] = complex(mminfty_hitting_lst(j, l, params, argument))
    return table


def erlang_loss_law(l: int, params: MmsParams, q: QLike) -> np.ndarray:
    """Law at e_q of the M/M/l/l queue started at l, on {0, ..., l}."""
    argument = TransformArgument.coerce(q)
    table = _upward_table(_base_params(params), argument, l)
    log_weights = _log_poisson_weights(params.rho, l)
    weights = np.exp(log_weights - log_weights.max()) * table[:l + 1, l]
    law = weights / weights.sum()
    return law.real.copy() if argument.is_real else law


def erlang_loss_pmf(n: int, l: int, params: MmsParams, q: QLike) -> LstValue:
    """P_l(Q(e_q) = n) for the M/M/l/l loss queue."""
    if not 0 <= n <= l:
        return 0.0
    return erlang_loss_law(l, params, q)[n]


def erlang_loss_mean(l: int, params: MmsParams, q: QLike) -> LstValue:
    """E_l[Q(e_q)] for the M/M/l/l loss queue."""
    law = erlang_loss_law(l, params, q)
    return np.dot(np.arange(l + 1), law)


def _base_params(params: MmsParams) -> MmsParams:
    """Parameters with the fields that do not affect M/M/infinity quantities normalised."""
    return MmsParams(lam=params.lam, mu=params.mu)


@dataclass(frozen=True)
class _MmsBase:
    """Reference-point quantities for Q(0) = s."""

    psi: LstValue
    ratio: LstValue
    below: np.ndarray
    normalizer: LstValue
    head: LstValue


@lru_cache(maxsize=256)
def _mms_base(params: MmsParams, argument: TransformArgument) -> _MmsBase:
    s = params.servers
    psi = mm1_busy_period_lst(params.lam, s * params.mu, argument)
    ratio = params.lam * psi / (s * params.mu)
    table = _upward_table(_base_params(params), argument, s)
    log_weights = _log_poisson_weights(params.rho, s)
    scale = log_weights[s]
    below = np.exp(log_weights[:s] - scale) * table[:s, s]
    # pi_n / pi_s = (rho / s)^(n - s) above s, and E_n = psi^(n - s)
    normalizer = below.sum() + 1.0 / (1.0 - ratio)
    return _MmsBase(psi=psi, ratio=ratio, below=below, normalizer=normalizer, head=below.sum())


def _base_pmf(n: int, params: MmsParams, argument: TransformArgument) -> complex:
    base = _mms_base(params, argument)
    s = params.servers
    if n < s:
        return base.below[n] / base.normalizer
    return base.ratio ** (n - s) / base.normalizer


def mms_pmf(k: int, n: int, params: MmsParams, q: QLike) -> LstValue:
    """
    P_k(Q(e_q) = n) for the M/M/s queue.

    Dispatches on the position of k and n relative to s: the base law from s,
    strong-Markov products when the path must pass s, and the conditioning sums
    over the infimum (k > s, n > s) or the supremum (k < s, n < s) otherwise.
    Parameters with a capacity are routed to `mmsk_pmf`.

    Raises:
        QueueModelError: If k or n is negative.
        QueueNumericsError: If the result leaves [0, 1 + 1e-10].
    """
    if params.capacity is not None:
        return mmsk_pmf(k, n, params, q)
    if k < 0 or n < 0:
        raise QueueModelError(f"States must be nonnegative, got k={k}, n={n}")
    argument = TransformArgument.coerce(q)
    s = params.servers
    base = _mms_base(params, argument)
    value = _base_pmf(n, params, argument)

    if k > s:
        psi = base.psi
        value = value * psi ** (k - s)
        for l in range(s + 1, min(n, k) + 1):
            value += (1.0 - base.ratio) * base.ratio ** (n - l) * (psi ** (k - l) - psi ** (k - l + 1))
    elif k < s:
        table = _upward_table(_base_params(params), argument, s)
        value = value * table[k, s]
        if n < s:
            for l in range(max(k, n), s):
                sup_mass = table[k, l] - table[k, l + 1]
                value += erlang_loss_law(l, params, argument)[n] * sup_mass

    return _finish(complex(value), argument, f"P_{k}(Q(e_q) = {n})")


def stationary_pmf(spec: BirthDeathSpec, tol: float = 1e-12) -> np.ndarray:
    """
    Normalised reversible measure of a birth-death chain on {lower, ..., top}.

    Raises:
        TruncationError: If an unbounded chain keeps more than `tol` mass at the top.
    """
    log_weights = _log_reversible_weights(spec)
    weights = np.exp(log_weights - log_weights.max())
    pmf = weights / weights.sum()
    if not spec.bounded and pmf[-1] > tol:
        raise TruncationError(f"Stationary mass {pmf[-1]:.3e} at truncation {spec.top} exceeds {tol:.1e}")
    return pmf


def _log_reversible_weights(spec: BirthDeathSpec) -> np.ndarray:
    size = spec.top - spec.lower + 1
    log_weights = np.zeros(size)
    for index in range(1, size):
        level = spec.lower + index
        birth = spec.birth_rate(level - 1)
        death = spec.death_rate(level)
        if birth == 0:
            log_weights[index:] = -np.inf
            break
        if death == 0:
            raise QueueModelError(f"Death rate at {level} is zero; the chain is not reversible on its range")
        log_weights[index] = log_weights[index - 1] + math.log(birth) - math.log(death)
    return log_weights


def reference_point_law(spec: BirthDeathSpec, reference: int, q: QLike,
                        tol: float = 1e-12) -> np.ndarray:
    """
    Law at e_q of a birth-death chain started at `reference`:
    pi_n E_n[e^{-q tau_ref}] / sum_j pi_j E_j[e^{-q tau_ref}], over lower..top.

    Raises:
        TruncationError: If an unbounded chain keeps relative weight above `tol` at its top.
    """
    argument = TransformArgument.coerce(q)
    log_weights = _log_reversible_weights(spec)
    weights = np.exp(log_weights - log_weights[reference - spec.lower])
    terms = weights * bd_hitting_table(spec, reference, argument)
    total = terms.sum()
    if not spec.bounded and abs(terms[-1]) > tol * abs(total):
        error_msg = f"Reference-point law not converged at truncation {spec.top}"
        logger.error(error_msg)
        raise TruncationError(error_msg)
    return terms / total


def reference_point_pmf(spec: BirthDeathSpec, reference: int, n: int, q: QLike) -> LstValue:
    """P_ref(Q(e_q) = n) for a reversible birth-death chain."""
    if not (spec.contains(reference) and spec.contains(n)):
        raise QueueModelError(f"States {reference}, {n} outside [{spec.lower}, {spec.top}]")
    return reference_point_law(spec, reference, q)[n - spec.lower]


def mmsk_pmf(k: int, n: int, params: MmsParams, q: QLike) -> LstValue:
    """
    P_k(Q(e_q) = n) for the M/M/s/K queue.

    Same reference-point architecture as `mms_pmf`; transforms above s come
    from the finite M/M/1/(K - s) chain, and the law given the infimum l > s is
    that of the chain on {l, ..., K} started at l.

    Raises:
        QueueModelError: If no capacity is set or k, n lie outside [0, K].
    """
    capacity = params.capacity
    if capacity is None:
        raise QueueModelError("mmsk_pmf needs a capacity K > s")
    if not (0 <= k <= capacity and 0 <= n <= capacity):
        raise QueueModelError(f"States must lie in [0, {capacity}], got k={k}, n={n}")
    argument = TransformArgument.coerce(q)
    s = params.servers
    upper = _finite_buffer_spec(params, s)

    above = bd_hitting_table(upper, s, argument)
    table = _upward_table(_base_params(params), argument, s)
    log_weights = _log_poisson_weights(params.rho, s)
    below = np.exp(log_weights[:s] - log_weights[s]) * table[:s, s]
    ratio = params.lam / (s * params.mu)
    buffer = np.power(ratio, np.arange(capacity - s + 1)) * above
    normalizer = below.sum() + buffer.sum()

    value = (below[n] if n < s else buffer[n - s]) / normalizer
    if k > s:
        value = value * above[k - s]
        for l in range(s + 1, min(n, k) + 1):
            inf_mass = (bd_hitting_lst(upper, k, l, argument)
                        - bd_hitting_lst(upper, k, l - 1, argument))
            if l == capacity:
                value += inf_mass
                continue
            reflected = _finite_buffer_spec(params, l)
            value += reference_point_law(reflected, l, argument)[n - l] * inf_mass
    elif k < s:
        value = value * table[k, s]
        if n < s:
            for l in range(max(k, n), s):
                sup_mass = table[k, l] - table[k, l + 1]
                value += erlang_loss_law(l, params, argument)[n] * sup_mass

    return _finish(complex(value), argument, f"P_{k}(Q(e_q) = {n})")


def _finite_buffer_spec(params: MmsParams, lower: int) -> BirthDeathSpec:
    """M/M/1-type chain on {lower, ..., K} with all s servers busy."""
    return BirthDeathSpec(birth=RateMap.constant(params.lam),
                          death=RateMap.constant(params.servers * params.mu),
                          lower=lower, upper=params.capacity)


def mm1_mean(initial: int, lam: float, mu: float, q: QLike) -> LstValue:
    """
    E[Q(e_q) | Q(0) = n0] for the M/M/1 queue:
    lam (1 - psi) / q + sum_{k=1}^{n0} k psi^(n0 - k) (1 - psi).

    Raises:
        QueueModelError: If lam >= mu or n0 < 0.
    """
    if not lam < mu:
        raise QueueModelError(f"mm1_mean needs lam < mu, got lam={lam}, mu={mu}")
    if initial < 0:
        raise QueueModelError(f"Initial state must be nonnegative, got {initial}")
    return _mm1_mean(initial, lam, mu, TransformArgument.coerce(q))


def _mm1_mean(initial: int, lam: float, mu: float, argument: TransformArgument) -> LstValue:
    psi = mm1_busy_period_lst(lam, mu, argument)
    value = lam * (1.0 - psi) / argument.scalar
    for level in range(1, initial + 1):
        value += level * psi ** (initial - level) * (1.0 - psi)
    return value


def mms_mean(initial: int, params: MmsParams, q: QLike) -> LstValue:
    """
    E[Q(e_q) | Q(0) = i] for the M/M/s queue.

    The mean from s is summed directly (geometric tail in closed form) and
    cross-checked against the split into an Erlang loss part and an M/M/1 part.
    Other initial states condition on the supremum (i < s) or infimum (i > s).

    Raises:
        QueueModelError: If lam >= s mu or i < 0.
        QueueNumericsError: If the decomposition cross-check fails.
    """
    s = params.servers
    if not params.lam < s * params.mu:
        raise QueueModelError(f"mms_mean needs lam < s mu, got lam={params.lam}, s mu={s * params.mu}")
    if initial < 0:
        raise QueueModelError(f"Initial state must be nonnegative, got {initial}")
    argument = TransformArgument.coerce(q)
    base = _mms_base(params, argument)
    r = base.ratio

    head = np.dot(np.arange(s), base.below) / base.normalizer
    tail = (s / (1.0 - r) + r / (1.0 - r) ** 2) / base.normalizer
    from_s = head + tail

    at_most_s = (base.head + 1.0) / base.normalizer
    at_least_s = 1.0 / ((1.0 - r) * base.normalizer)
    mm1_part = _mm1_mean(0, params.lam, s * params.mu, argument)
    decomposed = (at_most_s * erlang_loss_mean(s, params, argument)
                  + at_least_s * mm1_part + s * at_least_s * r)
    if abs(decomposed - from_s) > DECOMPOSITION_TOL:
        error_msg = f"M/M/s mean decomposition differs by {abs(decomposed - from_s):.3e}"
        logger.error(error_msg)
        raise QueueNumericsError(error_msg)

    value = from_s
    if initial < s:
        table = _upward_table(_base_params(params), argument, s)
        value = table[initial, s] * from_s
        for l in range(initial, s):
            value += (table[initial, l] - table[initial, l + 1]) * erlang_loss_mean(l, params, argument)
    elif initial > s:
        psi = base.psi
        value = psi ** (initial - s) * from_s
        for l in range(s + 1, initial + 1):
            value += (psi ** (initial - l) - psi ** (initial - l + 1)) * (l + r / (1.0 - r))

    value = complex(value)
    return value.real if argument.is_real else value
