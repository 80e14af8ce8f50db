"""
Executable checks of the conditional-law and factorization identities.

Every check computes the same quantity in independent ways (the forward
substitution solver, the reflected-chain resolvent and the joint
level/infimum resolvent) and reports the largest discrepancy.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from transient_queues.factorization.engine import (
    GeneratorPassageLst,
    HittingTimeLst,
    PreconditionError,
    solve_conditional_pmf,
)
from transient_queues.models.spec import MarkovPrpSpec
from transient_queues.oracles.resolvent import joint_inf_resolvent, level_resolvent
from transient_queues.transforms.core import QLike, TransformArgument

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_OMEGAS = tuple(round(0.1 * step, 1) for step in range(1, 31))


@dataclass
class DeviationReport:
    """Outcome of an identity check."""

    identity: str
    max_deviation: float
    tolerance: float
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation < self.tolerance)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "identity": self.identity,
            "passed": self.passed,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            **self.details,
        }


def _report(identity: str, deviations: Dict[Any, float], tolerance: float,
            **details: Any) -> DeviationReport:
    worst = max(deviations, key=deviations.get)
    report = DeviationReport(
        identity=identity,
        max_deviation=float(deviations[worst]),
        tolerance=tolerance,
        details={"worst_at": worst, **details},
    )
    log = logger.info if report.passed else logger.warning
    log(f"{identity}: max deviation {report.max_deviation:.3e} at {worst} "
        f"({'pass' if report.passed else 'FAIL'})")
    return report


def _require_free(spec: MarkovPrpSpec, identity: str) -> None:
    if spec.reflection_level is not None:
        error_msg = f"{identity} applies to the free process; the model sets a reflection level"
        logger.error(error_msg)
        raise PreconditionError(error_msg)


def verify_theorem_1(spec: MarkovPrpSpec, level: int, q: QLike, initial: int, top: int,
                     k_max: Optional[int] = None, phi: Optional[HittingTimeLst] = None,
                     tol: float = 1e-8, truncation_tol: float = 1e-9) -> DeviationReport:
    """
    Compare three computations of P(Q(e_q) = k + l | inf = l).

    (1) the forward-substitution solver, (2) the resolvent of the chain reflected
    at l started at l and (3) the joint level/infimum resolvent started at
    `initial` >= l, conditioned on inf = l.

    Args:
        spec: Free PRP specification.
        level: Conditioning level l.
        q: Transform argument.
        initial: Initial level n0 >= l for the joint oracle.
        top: Truncation top for the oracles.
        k_max: Largest k compared; defaults to top - initial.
        phi: Hitting-time transforms; defaults to restricted-generator solves.
        tol: Pass threshold on the maximum deviation.
        truncation_tol: Certificate threshold for the oracles.
    """
    _require_free(spec, "theorem1")
    if initial < level:
        raise PreconditionError(f"Initial level {initial} must be at least the conditioning level {level}")
    k_max = top - initial if k_max is None else k_max
    phi = phi or GeneratorPassageLst(spec, bottom=level, top=top + 2 * k_max,
                                     checked_top=top + k_max)
    argument = TransformArgument.coerce(q)

    engine = solve_conditional_pmf(spec, level, argument, phi, k_max, tol=truncation_tol)
    reflected = level_resolvent(spec.reflected(level), level, argument, top, tol=truncation_tol)
    joint = joint_inf_resolvent(spec, initial, argument, top, bottom=level,
                                tol=truncation_tol, allow_escape=True)
    conditional = joint.conditional(level)

    deviations = {}
    for k in range(k_max + 1):
        values = (engine.get(k), reflected.get(level + k), conditional.get(k, 0.0))
        deviations[k] = max(abs(a - b) for a in values for b in values)
    return _report("theorem1", deviations, tol, level=level, initial=initial,
                   q=argument.scalar, k_max=k_max)


def verify_theorem_2(spec: MarkovPrpSpec, initial: int, q: QLike, top: int,
                     levels: Optional[Iterable[int]] = None, tol: float = 1e-8,
                     truncation_tol: float = 1e-9) -> DeviationReport:
    """
    Compare the law of Q(e_q) - inf given inf = l for the free process and for
    the process reflected at zero, both started at `initial`.

    Args:
        levels: Conditioning levels 0 <= l <= initial; defaults to all of them.
    """
    _require_free(spec, "theorem2")
    if initial < 0:
        raise PreconditionError(f"Initial level {initial} must be nonnegative")
    levels = list(range(initial + 1)) if levels is None else list(levels)
    if any(l < 0 or l > initial for l in levels):
        raise PreconditionError(f"Conditioning levels must lie in [0, {initial}], got {levels}")

    free = joint_inf_resolvent(spec, initial, q, top, bottom=0, tol=truncation_tol, allow_escape=True)
    reflected = joint_inf_resolvent(spec.reflected(0), initial, q, top, tol=truncation_tol)

    deviations = {}
    for level in levels:
        first = free.conditional(level)
        second = reflected.conditional(level)
        keys = set(first) | set(second)
        deviations[level] = max(abs(first.get(k, 0.0) - second.get(k, 0.0)) for k in keys)
    return _report("theorem2", deviations, tol, initial=initial, q=TransformArgument.coerce(q).scalar)


def verify_corollary_1(spec: MarkovPrpSpec, q: QLike, top: int,
                       omegas: Sequence[float] = DEFAULT_OMEGAS, depth: Optional[int] = None,
                       tol: float = 1e-8, truncation_tol: float = 1e-9) -> DeviationReport:
    """
    Wiener-Hopf factorization at e_q from level 0:
    E[e^{iw Q}] = E[e^{iw inf}] E[e^{iw (Q - inf)}].

    The joint oracle runs on [-depth, top]; escape below -depth is certified.

    Raises:
        PreconditionError: If rates or jump laws vary over the truncated range.
    """
    _require_free(spec, "wiener-hopf")
    depth = top if depth is None else depth
    if not spec.is_state_independent(range(-depth, top + 1)):
        error_msg = "wiener-hopf requires state-independent rates and jump laws"
        logger.error(error_msg)
        raise PreconditionError(error_msg)

    joint = joint_inf_resolvent(spec, 0, q, top, bottom=-depth, tol=truncation_tol)
    deviations = {
        omega: abs(joint.level_cf(omega) - joint.infimum_cf(omega) * joint.reflected_cf(omega))
        for omega in omegas
    }
    return _report("wiener-hopf", deviations, tol, q=TransformArgument.coerce(q).scalar)


def verify_corollary_2(spec: MarkovPrpSpec, initial: int, q: QLike, top: int,
                       omegas: Sequence[float] = DEFAULT_OMEGAS, tol: float = 1e-8,
                       truncation_tol: float = 1e-9) -> DeviationReport:
    """
    Reflected factorization at e_q for a spec reflected at L:
    E_{n0}[e^{iw Q_L}] = E_{n0}[e^{iw (inf - L)}] E_L[e^{iw Q_L}].

    Raises:
        PreconditionError: If no reflection level is set, `initial` lies below it,
        or the jumps vary above it.
    """
    reflection = spec.reflection_level
    if reflection is None:
        raise PreconditionError("reflected-factorization needs a model with a reflection level")
    if initial < reflection:
        raise PreconditionError(f"Initial level {initial} lies below the reflection level {reflection}")
    if not spec.is_state_independent(range(reflection, top + 1)):
        error_msg = "reflected-factorization requires state-independent jumps above the reflection level"
        logger.error(error_msg)
        raise PreconditionError(error_msg)

    joint = joint_inf_resolvent(spec, initial, q, top, tol=truncation_tol)
    base = level_resolvent(spec, reflection, q, top, tol=truncation_tol)
    base_levels = np.asarray(base.labels, dtype=float)

    deviations = {}
    for omega in omegas:
        base_cf = np.sum(base.probabilities * np.exp(1j * omega * base_levels))
        shifted_inf_cf = joint.infimum_cf(omega) * np.exp(-1j * omega * reflection)
        deviations[omega] = abs(joint.level_cf(omega) - shifted_inf_cf * base_cf)
    return _report("reflected-factorization", deviations, tol, initial=initial,
                   q=TransformArgument.coerce(q).scalar)
