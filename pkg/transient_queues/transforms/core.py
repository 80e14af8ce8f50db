"""
Scalar special functions and closed-form Laplace-Stieltjes transforms.

Provides Kummer's function M(1, b, z), the M/M/1 busy-period transform and
first-passage transforms of birth-death chains. Every transform accepts a real
or complex argument q with positive real part; real q gives real results.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from typing import List, Union

import numpy as np
from scipy.integrate import quad

from transient_queues.errors import CertificationError, InputError, TruncationError
from transient_queues.models.spec import BirthDeathSpec

# Configure logging
logger = logging.getLogger(__name__)

# Series stop once this many consecutive terms fall below KUMMER_REL_TOL
KUMMER_STALL_TERMS = 3
KUMMER_REL_TOL = 1e-16
KUMMER_MAX_TERMS = 10000

# Beyond this |z| the series path is replaced by quadrature
KUMMER_SERIES_LIMIT = 50.0

# |psi| may exceed one by round-off only
PSI_SLACK = 1e-12

LstValue = Union[float, complex]


class TransformError(InputError):
    """Exception raised for invalid transform arguments."""
    pass


class KummerConvergenceError(CertificationError):
    """Exception raised when the Kummer series does not converge."""
    pass


@dataclass(frozen=True)
class TransformArgument:
    """Killing rate q of an independent exponential time; Re(q) > 0."""

    value: complex

    def __post_init__(self):
        value = complex(self.value)
        if not (math.isfinite(value.real) and math.isfinite(value.imag)) or value.real <= 0:
            error_msg = f"Transform argument must have positive real part, got {self.value!r}"
            logger.error(error_msg)
            raise TransformError(error_msg)
        object.__setattr__(self, "value", value)

    @classmethod
    def coerce(cls, q: Union[float, complex, "TransformArgument"]) -> "TransformArgument":
        if isinstance(q, cls):
            return q
        return cls(q)

    @property
    def is_real(self) -> bool:
        return self.value.imag == 0.0

    @property
    def scalar(self) -> LstValue:
        """The argument as a float when real, else as a complex number."""
        return self.value.real if self.is_real else self.value


QLike = Union[float, complex, TransformArgument]


def as_scalar(q: QLike) -> LstValue:
    """Validate q and return it as a float (real q) or complex number."""
    return TransformArgument.coerce(q).scalar


def _finish(value: complex, real: bool) -> LstValue:
    return value.real if real else value


def kummer_m1(b: complex, z: float) -> LstValue:
    """
    Kummer's confluent hypergeometric function M(1, b, z) for z <= 0.

    The series is summed in its Kummer-transformed form
    M(1, b, z) = e^z [1 + (b - 1) sum_{n>=1} (-z)^n / (n! (b - 1 + n))],
    whose terms share a sign for real b > 1. For |z| beyond the series limit the
    Euler integral (b - 1) int_0^1 e^{zu} (1 - u)^{b-2} du is used. Arguments with
    Re(b) <= 1 are lifted with M(1, b, z) = 1 + (z / b) M(1, b + 1, z).

    Args:
        b: Second parameter, Re(b) > 0.
        z: Real argument, z <= 0.

    Returns:
        M(1, b, z); a float when b is real.

    Raises:
        TransformError: If Re(b) <= 0 or z > 0.
        KummerConvergenceError: If the series does not converge within the term cap.
    """
    b = complex(b)
    real = b.imag == 0.0
    z = float(z)
    if b.real <= 0 or not math.isfinite(b.real) or not math.isfinite(b.imag):
        error_msg = f"kummer_m1 requires Re(b) > 0, got b={b!r}"
        logger.error(error_msg)
        raise TransformError(error_msg)
    if z > 0 or not math.isfinite(z):
        error_msg = f"kummer_m1 requires finite z <= 0, got z={z!r}"
        logger.error(error_msg)
        raise TransformError(error_msg)

    if z == 0.0:
        return 1.0 if real else complex(1.0)
    if b == 1:
        return _finish(complex(math.exp(z)), real)
    if b.real <= 1.0:
        return _finish(1.0 + (z / b) * complex(kummer_m1(b + 1.0, z)), real)
    if abs(z) > KUMMER_SERIES_LIMIT:
        return _finish(_kummer_m1_quadrature(b, z), real)
    return _finish(_kummer_m1_series(b, z), real)


def _kummer_m1_series(b: complex, z: float) -> complex:
    w = -z
    power = 1.0
    total = 0.0 + 0.0j
    stalled = 0
    for n in range(1, KUMMER_MAX_TERMS + 1):
        power *= w / n
        term = power / (b - 1.0 + n)
        total += term
        if abs(term) < KUMMER_REL_TOL * abs(total):
            stalled += 1
            if stalled >= KUMMER_STALL_TERMS:
                logger.debug(f"Kummer series for b={b}, z={z} converged after {n} terms")
                return math.exp(z) * (1.0 + (b - 1.0) * total)
        else:
            stalled = 0

    error_msg = f"Kummer series for b={b}, z={z} did not converge within {KUMMER_MAX_TERMS} terms"
    logger.error(error_msg)
    raise KummerConvergenceError(error_msg)


def _kummer_m1_quadrature(b: complex, z: float) -> complex:
    # u = 1 - e^{-s}: M(1, b, z) = e^z + (b - 1) int_0^inf (e^{z(1 - e^{-s})} - e^z) e^{-(b - 1)s} ds
    decay = b.real - 1.0
    omega = b.imag
    endpoint = math.exp(z)

    def gap(s: float) -> float:
        return math.exp(-z * math.expm1(-s)) - endpoint

    def real_part(s: float) -> float:
        return gap(s) * math.exp(-decay * s) * math.cos(omega * s)

    def imag_part(s: float) -> float:
        return -gap(s) * math.exp(-decay * s) * math.sin(omega * s)

    def integrate(function) -> float:
        options = dict(epsabs=1e-15, epsrel=1e-13, limit=400)
        head, _ = quad(function, 0.0, 1.0, **options)
        tail, _ = quad(function, 1.0, math.inf, **options)
        return head + tail

    re_value = integrate(real_part)
    im_value = integrate(imag_part) if omega != 0.0 else 0.0
    logger.debug(f"Kummer quadrature path used for b={b}, z={z}")
    return endpoint + (b - 1.0) * complex(re_value, im_value)


def mm1_busy_period_lst(lam: float, m: float, q: QLike) -> LstValue:
    """
    Transform psi(q) of the M/M/1 busy period.

    psi is the root of lam psi^2 - (lam + m + q) psi + m = 0 with |psi| <= 1,
    evaluated as 2m / (s + sqrt(s^2 - 4 lam m)) with s = lam + m + q.

    Args:
        lam: Arrival rate, > 0.
        m: Service rate, > 0.
        q: Transform argument.

    Returns:
        psi(q); real for real q.
    """
    if not (lam > 0 and m > 0):
        error_msg = f"Busy-period transform requires positive rates, got lam={lam}, m={m}"
        logger.error(error_msg)
        raise TransformError(error_msg)
    argument = TransformArgument.coerce(q)
    s = lam + m + argument.value
    psi = 2.0 * m / (s + cmath.sqrt(s * s - 4.0 * lam * m))
    if abs(psi) > 1.0 + PSI_SLACK:
        error_msg = f"Busy-period root {psi} lies outside the unit disc"
        logger.error(error_msg)
        raise TransformError(error_msg)
    return _finish(psi, argument.is_real)


def bd_down_factors(spec: BirthDeathSpec, q: QLike, tail: float = 1.0) -> List[complex]:
    """
    One-step downward transforms E_n[e^{-q tau_{n-1}}] for n = lower..top.

    Uses phi_n = mu_n / (lam_n + mu_n + q - lam_n phi_{n+1}) started from
    phi_{top+1} = `tail`. With `tail` = 1 the top level reflects, matching the
    truncated generator; a finite upper boundary makes `tail` irrelevant.
    """
    value = TransformArgument.coerce(q).value
    factors = [0j] * (spec.top - spec.lower + 1)
    following = complex(tail)
    for n in range(spec.top, spec.lower - 1, -1):
        lam = spec.birth_rate(n)
        mu = spec.death_rate(n)
        following = mu / (lam + mu + value - lam * following)
        factors[n - spec.lower] = following
    return factors


def bd_up_factors(spec: BirthDeathSpec, q: QLike) -> List[complex]:
    """
    One-step upward transforms E_n[e^{-q tau_{n+1}}] for n = lower..top.

    Uses xi_n = lam_n / (lam_n + mu_n + q - mu_n xi_{n-1}) from the lower boundary.
    """
    value = TransformArgument.coerce(q).value
    factors = []
    previous = 0j
    for n in range(spec.lower, spec.top + 1):
        lam = spec.birth_rate(n)
        mu = spec.death_rate(n)
        previous = lam / (lam + mu + value - mu * previous)
        factors.append(previous)
    return factors


def bd_hitting_lst(spec: BirthDeathSpec, start: int, target: int, q: QLike,
                   tol: float = 1e-12) -> LstValue:
    """
    First-passage transform E_start[e^{-q tau_target}] of a birth-death chain.

    Birth-death paths are skip-free, so the passage transform is the product of
    one-step transforms between `start` and `target`. For an unbounded chain the
    downward recursion is run with the truncation level treated as reflecting and
    as absorbing; the two results must agree within `tol`.

    Args:
        spec: Birth-death specification.
        start: Initial state.
        target: State to reach.
        q: Transform argument.
        tol: Allowed boundary sensitivity.

    Returns:
        The transform value; real for real q.

    Raises:
        TransformError: If a state lies outside the chain's range.
        TruncationError: If the truncation level influences the result beyond `tol`.
    """
    argument = TransformArgument.coerce(q)
    for state in (start, target):
        if not spec.contains(state):
            error_msg = f"State {state} outside [{spec.lower}, {spec.top}]"
            logger.error(error_msg)
            raise TransformError(error_msg)

    if start == target:
        return _finish(complex(1.0), argument.is_real)

    if start < target:
        factors = bd_up_factors(spec, argument)
        value = complex(np.prod(factors[start - spec.lower:target - spec.lower]))
        return _finish(value, argument.is_real)

    window = slice(target + 1 - spec.lower, start + 1 - spec.lower)
    reflecting = complex(np.prod(bd_down_factors(spec, argument, tail=1.0)[window]))
    if not spec.bounded:
        absorbing = complex(np.prod(bd_down_factors(spec, argument, tail=0.0)[window]))
        sensitivity = abs(reflecting - absorbing)
        if sensitivity > tol:
            error_msg = (f"Truncation at {spec.top} changes E_{start}[exp(-q tau_{target})] by "
                         f"{sensitivity:.3e} > {tol:.1e}; raise the truncation level")
            logger.error(error_msg)
            raise TruncationError(error_msg)
    return _finish(reflecting, argument.is_real)


def bd_hitting_table(spec: BirthDeathSpec, target: int, q: QLike) -> np.ndarray:
    """
    Transforms E_n[e^{-q tau_target}] for every n = lower..top.

    The truncation level reflects. Callers certify the truncation on the
    quantities they build from the table.
    """
    argument = TransformArgument.coerce(q)
    if not spec.contains(target):
        raise TransformError(f"Target {target} outside [{spec.lower}, {spec.top}]")
    size = spec.top - spec.lower + 1
    table = np.ones(size, dtype=complex)
    offset = target - spec.lower

    down = bd_down_factors(spec, argument)
    for index in range(offset + 1, size):
        table[index] = table[index - 1] * down[index]

    up = bd_up_factors(spec, argument)
    for index in range(offset - 1, -1, -1):
        table[index] = table[index + 1] * up[index]

    return table.real.copy() if argument.is_real else table
