"""
Truncated-chain oracles: resolvent solves and uniformization.

The law of a CTMC at an independent exponential time e_q is the row
q (qI - G)^{-1}; the law at a deterministic time t is a Poisson mixture of
powers of the uniformized chain. Both serve as ground truth for the closed
forms and for the factorization engine.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import norm as sparse_norm, splu
from scipy.stats import poisson

from transient_queues.errors import CertificationError, TruncationError
from transient_queues.models.generator import (
    GeneratorMatrix,
    build_joint_inf_generator,
    build_level_generator,
)
from transient_queues.models.spec import MarkovPrpSpec, ModelError
from transient_queues.transforms.core import LstValue, QLike, TransformArgument

# Configure logging
logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-12
POISSON_TAIL = 1e-13

# Uniformization is refused beyond this many expected jumps
MAX_UNIFORMIZATION_JUMPS = 1e7


class OracleError(CertificationError):
    """Exception raised when an oracle computation cannot be trusted."""
    pass


@dataclass
class ResolventPmf:
    """Law of the level at e_q (or at a fixed time) on a truncated range."""

    initial: Hashable
    q: Optional[LstValue]
    labels: list
    probabilities: np.ndarray
    certificate: Optional[float] = None
    method: str = "resolvent"

    def as_dict(self) -> Dict[Hashable, LstValue]:
        return dict(zip(self.labels, self.probabilities.tolist()))

    def get(self, label: Hashable) -> LstValue:
        try:
            return self.probabilities[self.labels.index(label)]
        except ValueError:
            return 0.0

    def total(self) -> LstValue:
        return self.probabilities.sum()

    def escaped(self) -> float:
        """Mass lost below the truncation bottom."""
        return float(max(0.0, 1.0 - np.real(self.total())))

    def mean(self) -> LstValue:
        return np.dot(np.asarray(self.labels, dtype=float), self.probabilities)


def resolvent_row(gen: GeneratorMatrix, initial: Hashable, q: QLike) -> np.ndarray:
    """
    Row `initial` of q (qI - G)^{-1}.

    Tridiagonal generators use a banded LU, everything else a sparse LU. The
    relative residual of the transposed system is checked.

    Raises:
        OracleError: If the solve is singular or its residual is too large.
    """
    argument = TransformArgument.coerce(q)
    dtype = float if argument.is_real else complex
    system = (argument.scalar * sp.identity(gen.size, format="csr") - gen.matrix).T.tocsr()
    system = system.astype(dtype)
    rhs = np.zeros(gen.size, dtype=dtype)
    rhs[gen.index_of(initial)] = argument.scalar

    try:
        if gen.is_tridiagonal() and gen.size > 1:
            banded = np.zeros((3, gen.size), dtype=dtype)
            banded[0, 1:] = system.diagonal(1)
            banded[1, :] = system.diagonal(0)
            banded[2, :-1] = system.diagonal(-1)
            solution = solve_banded((1, 1), banded, rhs)
        else:
            solution = splu(system.tocsc()).solve(rhs)
    except (np.linalg.LinAlgError, RuntimeError, ValueError) as e:
        error_msg = f"Resolvent solve failed for q={argument.scalar}: {e}"
        logger.error(error_msg)
        raise OracleError(error_msg)

    residual = np.abs(system @ solution - rhs).max()
    scale = abs(argument.scalar) + sparse_norm(system, np.inf) * np.abs(solution).max()
    if not np.all(np.isfinite(solution)) or residual > RESIDUAL_TOL * scale:
        error_msg = f"Resolvent residual {residual:.3e} exceeds tolerance for q={argument.scalar}"
        logger.error(error_msg)
        raise OracleError(error_msg)

    return solution


def resolvent_pmf(gen: GeneratorMatrix, initial: Hashable, q: QLike) -> ResolventPmf:
    """
    Law of the truncated chain at e_q started from `initial`.

    Args:
        gen: Generator of the truncated chain.
        initial: Initial state label.
        q: Killing rate, Re(q) > 0.

    Returns:
        ResolventPmf over the generator's labels.
    """
    argument = TransformArgument.coerce(q)
    probabilities = resolvent_row(gen, initial, argument)
    return ResolventPmf(initial=initial, q=argument.scalar, labels=list(gen.labels),
                        probabilities=probabilities)


def uniformization_pmf(gen: GeneratorMatrix, initial: Hashable, t: float) -> ResolventPmf:
    """
    Law of the truncated chain at time t by uniformization.

    The Poisson mixture is cut where the remaining Poisson mass is below 1e-13.

    Raises:
        OracleError: If t is negative or the expected number of jumps is too large.
    """
    if t < 0:
        raise OracleError(f"Time must be nonnegative, got {t}")
    distribution = np.zeros(gen.size)
    distribution[gen.index_of(initial)] = 1.0
    rate = gen.uniformization_rate()
    if t == 0 or rate == 0:
        return ResolventPmf(initial=initial, q=None, labels=list(gen.labels),
                            probabilities=distribution, method="uniformization")

    mean_jumps = rate * t
    if mean_jumps > MAX_UNIFORMIZATION_JUMPS:
        error_msg = f"Uniformization needs about {mean_jumps:.3e} jumps; use the resolvent and inversion"
        logger.error(error_msg)
        raise OracleError(error_msg)

    jumps = int(poisson.isf(POISSON_TAIL, mean_jumps)) + 1
    weights = poisson.pmf(np.arange(jumps + 1), mean_jumps)
    step = (sp.identity(gen.size, format="csr") + gen.matrix / rate).T.tocsr()

    result = weights[0] * distribution
    for weight in weights[1:]:
        distribution = step @ distribution
        result += weight * distribution
    logger.debug(f"Uniformization at t={t} used {jumps} Poisson terms")

    return ResolventPmf(initial=initial, q=None, labels=list(gen.labels),
                        probabilities=result, method="uniformization")


def _default_bottom(spec: MarkovPrpSpec, bottom: Optional[int]) -> int:
    if spec.reflection_level is not None:
        return spec.reflection_level if bottom is None else bottom
    if bottom is None:
        raise ModelError("An unreflected model needs an explicit truncation bottom")
    return bottom


def level_resolvent(spec: MarkovPrpSpec, initial: int, q: QLike, top: int,
                    bottom: Optional[int] = None, extension: int = 10,
                    tol: float = 1e-9) -> ResolventPmf:
    """
    Certified law of the level process at e_q.

    The solve is repeated with the top raised by `extension`; the largest change
    in any probability (including mass that moved above the original top) is the
    truncation certificate.

    Raises:
        TruncationError: If the certificate exceeds `tol`.
    """
    bottom = _default_bottom(spec, bottom)
    if not bottom <= initial <= top:
        raise ModelError(f"Initial level {initial} outside truncation [{bottom}, {top}]")

    coarse = resolvent_pmf(build_level_generator(spec, (bottom, top), escape_tol=None), initial, q)
    fine = resolvent_pmf(
        build_level_generator(spec, (bottom, top + extension), escape_tol=None), initial, q
    )
    size = len(coarse.labels)
    change = np.abs(fine.probabilities[:size] - coarse.probabilities)
    certificate = float(max(change.max(), np.abs(fine.probabilities[size:]).sum()))
    _certify(certificate, tol, f"level resolvent from {initial} at top {top}")

    fine.labels = fine.labels[:size]
    fine.probabilities = fine.probabilities[:size]
    fine.certificate = certificate
    return fine


def _certify(certificate: float, tol: float, what: str) -> None:
    if certificate > tol:
        error_msg = f"Truncation certificate {certificate:.3e} for {what} exceeds {tol:.1e}"
        logger.error(error_msg)
        raise TruncationError(error_msg)
    logger.debug(f"Truncation certificate for {what}: {certificate:.3e}")


@dataclass
class JointInfimumPmf:
    """Joint law of (Q(e_q), inf_{[0, e_q]} Q) on a truncated range."""

    initial: int
    q: LstValue
    levels: np.ndarray
    infima: np.ndarray
    probabilities: np.ndarray
    certificate: Optional[float] = None
    escaped: LstValue = 0.0
    _index: Dict[Tuple[int, int], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {(int(i), int(m)): r for r, (i, m) in enumerate(zip(self.levels, self.infima))}

    def get(self, level: int, infimum: int) -> LstValue:
        position = self._index.get((level, infimum))
        return 0.0 if position is None else self.probabilities[position]

    def marginal_level(self) -> Dict[int, LstValue]:
        return _group(self.levels, self.probabilities)

    def infimum_pmf(self) -> Dict[int, LstValue]:
        return _group(self.infima, self.probabilities)

    def conditional(self, infimum: int) -> Dict[int, LstValue]:
        """P(Q(e_q) - l = k | inf = l) for l = `infimum`."""
        mask = self.infima == infimum
        mass = self.probabilities[mask].sum()
        if abs(mass) == 0:
            raise OracleError(f"Infimum {infimum} has zero probability from {self.initial}")
        excess = self.levels[mask] - infimum
        return dict(zip(excess.tolist(), (self.probabilities[mask] / mass).tolist()))

    def level_cf(self, omega: float) -> complex:
        return complex(np.sum(self.probabilities * np.exp(1j * omega * self.levels)))

    def infimum_cf(self, omega: float) -> complex:
        return complex(np.sum(self.probabilities * np.exp(1j * omega * self.infima)))

    def reflected_cf(self, omega: float) -> complex:
        return complex(np.sum(self.probabilities * np.exp(1j * omega * (self.levels - self.infima))))


def _group(keys: np.ndarray, values: np.ndarray) -> Dict[int, LstValue]:
    grouped: Dict[int, LstValue] = {}
    for key, value in zip(keys.tolist(), values.tolist()):
        grouped[key] = grouped.get(key, 0.0) + value
    return dict(sorted(grouped.items()))


def joint_inf_resolvent(spec: MarkovPrpSpec, initial: int, q: QLike, top: int,
                        bottom: Optional[int] = None, extension: int = 10,
                        tol: float = 1e-9, allow_escape: bool = False) -> JointInfimumPmf:
    """
    Certified joint law of the level and its running infimum at e_q.

    Mass escaping below `bottom` is part of the certificate, as is the change
    under raising the top by `extension`. With `allow_escape` the escaped mass is
    only reported: absorbed paths have infimum below `bottom`, so the table and
    its conditional laws for infima >= `bottom` stay exact.

    Raises:
        TruncationError: If the certificate exceeds `tol`.
    """
    bottom = _default_bottom(spec, bottom)
    argument = TransformArgument.coerce(q)

    def solve(upper: int) -> Tuple[GeneratorMatrix, np.ndarray]:
        gen = build_joint_inf_generator(spec, initial, (bottom, upper))
        return gen, resolvent_row(gen, (initial, initial), argument)

    coarse_gen, coarse = solve(top)
    fine_gen, fine = solve(top + extension)
    fine_by_label = dict(zip(fine_gen.labels, fine))
    change = max(abs(fine_by_label[label] - value) for label, value in zip(coarse_gen.labels, coarse))
    beyond = sum(abs(value) for (level, _), value in fine_by_label.items() if level > top)
    escaped = 1.0 - coarse.sum()
    certificate = float(max(change, beyond) if allow_escape else max(change, beyond, abs(escaped)))
    _certify(certificate, tol, f"joint infimum resolvent from {initial} at top {top}")

    kept = [label for label in fine_gen.labels if label[0] <= top]
    return JointInfimumPmf(
        initial=initial,
        q=argument.scalar,
        levels=np.array([label[0] for label in kept]),
        infima=np.array([label[1] for label in kept]),
        probabilities=np.array([fine_by_label[label] for label in kept]),
        certificate=certificate,
        escaped=escaped,
    )


def passage_lst(gen: GeneratorMatrix, below: int, q: QLike) -> Dict[int, LstValue]:
    """
    Transforms E_m[e^{-q tau}] of the first time strictly below `below`.

    Solves (qI - G_R) phi = r on the levels >= `below`, with G_R the restricted
    generator and r the rate of leaving that set (escape included).

    Args:
        gen: Level generator (integer labels).
        below: Level k; passage means reaching a level < k.
        q: Transform argument.

    Returns:
        Mapping from each level m >= k to phi_{m,k}(q).
    """
    argument = TransformArgument.coerce(q)
    keep = [position for position, label in enumerate(gen.labels) if label >= below]
    if not keep:
        return {}
    restricted = gen.matrix[keep][:, keep]
    exit_rate = -np.asarray(restricted.sum(axis=1)).ravel()
    dtype = float if argument.is_real else complex
    system = (argument.scalar * sp.identity(len(keep), format="csc") - restricted).tocsc().astype(dtype)
    try:
        values = splu(system).solve(exit_rate.astype(dtype))
    except RuntimeError as e:
        error_msg = f"Passage transform solve below {below} failed: {e}"
        logger.error(error_msg)
        raise OracleError(error_msg)
    return {gen.labels[position]: value for position, value in zip(keep, values.tolist())}
