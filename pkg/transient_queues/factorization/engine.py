"""
Conditional-law solver for PRP systems at an exponential time.

Given the hitting-time transforms phi_{m,k}(q) of the free level process, the
law of Q(e_q) - l conditioned on the running infimum being l solves a
triangular linear system. This module solves it by forward substitution and
composes the conditional laws with the infimum law into the transient pmf.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from transient_queues.errors import CertificationError, InputError, TruncationError
from transient_queues.models.generator import build_level_generator
from transient_queues.models.spec import BirthDeathSpec, MarkovPrpSpec
from transient_queues.oracles.resolvent import passage_lst
from transient_queues.transforms.core import (
    LstValue,
    QLike,
    TransformArgument,
    bd_hitting_lst,
    mm1_busy_period_lst,
)

# Configure logging
logger = logging.getLogger(__name__)

# Round-off masses above -NEGATIVE_MASS_TOL are clipped to zero
NEGATIVE_MASS_TOL = 1e-12


class FactorizationError(CertificationError):
    """Exception raised when the conditional-law system yields an invalid solution."""
    pass


class PreconditionError(InputError):
    """Exception raised when a model does not satisfy an identity's hypotheses."""
    pass


class HittingTimeLst:
    """
    Evaluator of phi_{m,k}(q), the transform of the first time the free level
    process started at m is strictly below k.
    """

    def __call__(self, m: int, k: int, q: QLike) -> LstValue:
        raise NotImplementedError

    def infimum_pmf(self, initial: int, q: QLike, bottom: int,
                    reflection_level: Optional[int] = None) -> Dict[int, LstValue]:
        """
        Law of the running infimum at e_q started from `initial`.

        P(inf = l) = phi_{n0,l+1} - phi_{n0,l} with phi_{n0,n0+1} = 1. With a
        reflection level L the mass at L is phi_{n0,L+1} and `bottom` is ignored.
        """
        low = bottom if reflection_level is None else reflection_level
        masses = {}
        upper = 1.0
        for level in range(initial, low - 1, -1):
            if reflection_level is not None and level == reflection_level:
                masses[level] = upper
                break
            lower = self(initial, level, q)
            masses[level] = upper - lower
            upper = lower
        return dict(sorted(masses.items()))


class PsiPowerLst(HittingTimeLst):
    """phi_{m,k} = psi(q)^(m-k+1) for skip-free downward motion at constant rates."""

    def __init__(self, lam: float, mu: float):
        self.lam = lam
        self.mu = mu

    def __call__(self, m: int, k: int, q: QLike) -> LstValue:
        if m < k:
            return 1.0
        return mm1_busy_period_lst(self.lam, self.mu, q) ** (m - k + 1)


class BirthDeathLst(HittingTimeLst):
    """phi_{m,k} = E_m[e^{-q tau_{k-1}}] on a birth-death chain."""

    def __init__(self, spec: BirthDeathSpec):
        self.spec = spec

    def __call__(self, m: int, k: int, q: QLike) -> LstValue:
        if m < k:
            return 1.0
        return bd_hitting_lst(self.spec, m, k - 1, q)


class GeneratorPassageLst(HittingTimeLst):
    """
    phi_{m,k} from restricted-generator solves on a truncated level generator.

    Each solve yields phi_{m,k} for all m at once; results are cached per (k, q)
    under a lock so one instance can be shared across threads.

    Jumps above `top` are cut off, so phi_{m,k} is only reliable for m well
    below it; callers pass top >= (largest level queried) + 2 k_max. With
    `extension` > 0 every solve is repeated with the top raised by `extension`
    and the largest change over m <= `checked_top` (default top - extension) is
    logged and kept in `sensitivity`; a change above `tol` is logged as a warning.
    """

    def __init__(self, spec: MarkovPrpSpec, bottom: int, top: int, extension: int = 10,
                 checked_top: Optional[int] = None, tol: float = 1e-9):
        unreflected = spec.unreflected()
        self.generator = build_level_generator(unreflected, (bottom, top), escape_tol=None)
        self.extended = None
        if extension > 0:
            self.extended = build_level_generator(unreflected, (bottom, top + extension), escape_tol=None)
        self.top = top
        self.extension = extension
        self.checked_top = top - extension if checked_top is None else min(checked_top, top)
        self.tol = tol
        self.sensitivity = 0.0
        self._cache: Dict[Tuple[int, complex], Dict[int, LstValue]] = {}
        self._lock = threading.Lock()

    def __call__(self, m: int, k: int, q: QLike) -> LstValue:
        if m < k:
            return 1.0
        argument = TransformArgument.coerce(q)
        key = (k, argument.value)
        with self._lock:
            values = self._cache.get(key)
        if values is None:
            values = passage_lst(self.generator, k, argument)
            change = self._top_sensitivity(k, argument, values)
            with self._lock:
                self._cache[key] = values
                self.sensitivity = max(self.sensitivity, change)
        return values[min(m, self.top)]

    def _top_sensitivity(self, k: int, argument: TransformArgument,
                         values: Dict[int, LstValue]) -> float:
        if self.extended is None:
            return 0.0
        extended = passage_lst(self.extended, k, argument)
        compared = [level for level in values if level <= self.checked_top]
        change = max((abs(values[level] - extended[level]) for level in compared), default=0.0)
        if change > self.tol:
            logger.warning(f"Passage transforms below {k} change by {change:.3e} when the top "
                           f"{self.top} is raised by {self.extension}")
        else:
            logger.debug(f"Passage transforms below {k}: top sensitivity {change:.3e}")
        return float(change)


class FunctionLst(HittingTimeLst):
    """Wraps a user-supplied callable phi(m, k, q)."""

    def __init__(self, function: Callable[[int, int, QLike], LstValue]):
        self.function = function

    def __call__(self, m: int, k: int, q: QLike) -> LstValue:
        return 1.0 if m < k else self.function(m, k, q)


@dataclass
class ConditionalPmf:
    """Law of Q(e_q) - l given that the running infimum over [0, e_q] equals l."""

    level: int
    masses: np.ndarray
    k_max: int
    tail: LstValue = 0.0

    def get(self, k: int) -> LstValue:
        return self.masses[k] if 0 <= k < len(self.masses) else 0.0

    def total(self) -> LstValue:
        return self.masses.sum()

    def as_dict(self) -> Dict[int, LstValue]:
        return dict(enumerate(self.masses.tolist()))


def _coefficients(spec: MarkovPrpSpec, level: int, q: LstValue, phi: HittingTimeLst,
                  k: int, c_count: int) -> Tuple[LstValue, np.ndarray]:
    """
    Coefficients of the tail equation at k >= 1:
    tail(k) = a_k c_{k-1} + sum_{j<k} b_{k,j} c_j.

    Only b_{k,j} for j < c_count are returned.
    """
    a_k = spec.single_arrival(k - 1 + level) * (1.0 - phi(k + level, k + level, q)) / q
    b_k = np.zeros(c_count, dtype=complex)
    for j in range(min(k, c_count)):
        batch = spec.batch_rate(j + level)
        if batch == 0:
            continue
        sizes = spec.batch_sizes(j + level)
        for size_index, mass in enumerate(sizes):
            target = j + size_index + 1
            if mass == 0 or target < k:
                continue
            b_k[j] += batch * mass * (1.0 - phi(target + level, k + level, q)) / q
    return a_k, b_k


def solve_conditional_pmf(spec: MarkovPrpSpec, level: int, q: QLike, phi: HittingTimeLst,
                          k_max: int, tol: float = 1e-8) -> ConditionalPmf:
    """
    Solve the conditional-law system by forward substitution.

    c_0 = 1 / (1 + a_1 + b_{1,0}) from the k = 1 equation and normalization;
    for k >= 1, c_k (1 + a_{k+1} + b_{k+1,k}) = tail(k) - sum_{j<k} b_{k+1,j} c_j,
    with tail(k) taken from the k-th equation.

    Args:
        spec: Free (unreflected) PRP specification.
        level: Conditioning infimum l.
        q: Transform argument.
        phi: Hitting-time transforms of the free level process.
        k_max: Largest k solved for.
        tol: Allowed mass beyond k_max.

    Returns:
        ConditionalPmf with masses c_0..c_{k_max}.

    Raises:
        PreconditionError: If the spec is reflected.
        FactorizationError: If a mass is negative beyond round-off.
        TruncationError: If the mass beyond k_max exceeds `tol`.
    """
    if spec.reflection_level is not None:
        error_msg = "The conditional-law system describes the free process; remove the reflection level"
        logger.error(error_msg)
        raise PreconditionError(error_msg)
    argument = TransformArgument.coerce(q)
    q_value = argument.scalar

    masses = np.zeros(k_max + 1, dtype=complex)
    a_next, b_next = _coefficients(spec, level, q_value, phi, 1, k_max + 1)
    masses[0] = 1.0 / (1.0 + a_next + b_next[0])

    for k in range(1, k_max + 1):
        a_k, b_k = a_next, b_next
        tail = a_k * masses[k - 1] + np.dot(b_k[:k], masses[:k])
        a_next, b_next = _coefficients(spec, level, q_value, phi, k + 1, k_max + 1)
        rhs = tail - np.dot(b_next[:k], masses[:k])
        masses[k] = rhs / (1.0 + a_next + b_next[k])
        _check_mass(masses, k, argument.is_real)

    remaining = a_next * masses[k_max] + np.dot(b_next[:k_max + 1], masses[:k_max + 1])
    if abs(remaining) > tol:
        error_msg = (f"Conditional law at level {level} keeps mass {abs(remaining):.3e} "
                     f"beyond k_max={k_max}; raise k_max")
        logger.error(error_msg)
        raise TruncationError(error_msg)

    if argument.is_real:
        masses = masses.real.copy()
        remaining = float(np.real(remaining))
    logger.debug(f"Conditional law at level {level} solved up to k={k_max}, tail {abs(remaining):.2e}")
    return ConditionalPmf(level=level, masses=masses, k_max=k_max, tail=remaining)


def _check_mass(masses: np.ndarray, k: int, real: bool) -> None:
    if not real:
        return
    value = masses[k].real
    if value < -NEGATIVE_MASS_TOL:
        error_msg = f"Negative conditional mass {value:.3e} at k={k}; transforms or truncation inconsistent"
        logger.error(error_msg)
        raise FactorizationError(error_msg)
    if value < 0:
        masses[k] = 0.0


@dataclass
class TransientPmf:
    """Law of Q(e_q) over consecutive levels starting at `lowest`."""

    initial: int
    q: LstValue
    lowest: int
    probabilities: np.ndarray
    neglected: LstValue = 0.0

    @property
    def levels(self) -> range:
        return range(self.lowest, self.lowest + len(self.probabilities))

    def get(self, level: int) -> LstValue:
        index = level - self.lowest
        return self.probabilities[index] if 0 <= index < len(self.probabilities) else 0.0

    def total(self) -> LstValue:
        return self.probabilities.sum()

    def as_dict(self) -> Dict[int, LstValue]:
        return dict(zip(self.levels, self.probabilities.tolist()))


def transient_pmf(spec: MarkovPrpSpec, initial: int, q: QLike, phi: HittingTimeLst,
                  k_max: int, bottom: Optional[int] = None, tol: float = 1e-9) -> TransientPmf:
    """
    Law of Q(e_q) from `initial` by conditioning on the running infimum.

    P(Q(e_q) = n) = sum_l P(inf = l) c^(l)_{n-l}, with the conditional laws
    c^(l) of the free process. A reflected spec sums over l from its reflection
    level; an unreflected spec sums from `bottom` and certifies that the
    neglected infimum mass phi_{n0,bottom} is below `tol`.

    Raises:
        PreconditionError: If an unreflected spec has no `bottom`.
        TruncationError: If the neglected infimum mass exceeds `tol`.
    """
    argument = TransformArgument.coerce(q)
    reflection = spec.reflection_level
    if reflection is None and bottom is None:
        raise PreconditionError("An unreflected model needs a truncation bottom for its infimum")
    low = reflection if reflection is not None else bottom
    if initial < low:
        raise PreconditionError(f"Initial level {initial} lies below {low}")

    free = spec.unreflected()
    weights = phi.infimum_pmf(initial, argument, low, reflection)
    neglected = 0.0 if reflection is not None else phi(initial, low, argument)
    if abs(neglected) > tol:
        error_msg = f"Infimum mass {abs(neglected):.3e} below {low} exceeds {tol:.1e}; lower the bottom"
        logger.error(error_msg)
        raise TruncationError(error_msg)

    dtype = float if argument.is_real else complex
    probabilities = np.zeros(initial - low + k_max + 1, dtype=dtype)
    for level, weight in weights.items():
        conditional = solve_conditional_pmf(free, level, argument, phi, k_max, tol=tol)
        start = level - low
        probabilities[start:start + k_max + 1] += weight * conditional.masses

    logger.info(f"Transient pmf from {initial} composed over {len(weights)} infimum levels")
    return TransientPmf(initial=initial, q=argument.scalar, lowest=low,
                        probabilities=probabilities, neglected=neglected)
