"""
Truncated CTMC generators for PRP level processes and birth-death chains.

Upward moves past the top of the truncation are lumped onto the top level.
Downward moves below the bottom are recorded per row as escape rate and are
never lumped silently.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from transient_queues.errors import TruncationError
from transient_queues.models.spec import BirthDeathSpec, MarkovPrpSpec, ModelError

# Configure logging
logger = logging.getLogger(__name__)

# Escape rate above this fails level-generator construction by default
DEFAULT_ESCAPE_TOL = 1e-12


@dataclass
class GeneratorMatrix:
    """
    Generator on an explicit list of state labels.

    Labels are integer levels for level generators and (level, infimum) pairs
    for the joint generator. `escape[r]` is the total rate out of state r to
    states below the truncation; the diagonal includes it.
    """

    labels: List[Hashable]
    matrix: sp.csr_matrix
    escape: np.ndarray
    index: Dict[Hashable, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {label: position for position, label in enumerate(self.labels)}

    @property
    def size(self) -> int:
        return len(self.labels)

    def index_of(self, label: Hashable) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise ModelError(f"State {label!r} is outside the generator's state space")

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def bandwidths(self) -> Tuple[int, int]:
        """Lower and upper bandwidth of the matrix."""
        coo = self.matrix.tocoo()
        if coo.nnz == 0:
            return 0, 0
        offsets = coo.col - coo.row
        return int(max(0, -offsets.min())), int(max(0, offsets.max()))

    def is_tridiagonal(self) -> bool:
        lower, upper = self.bandwidths()
        return lower <= 1 and upper <= 1

    def max_escape(self) -> float:
        return float(self.escape.max()) if self.escape.size else 0.0

    def row_defects(self) -> np.ndarray:
        """Row sums plus escape rates; zero for a well-formed generator."""
        return np.asarray(self.matrix.sum(axis=1)).ravel() + self.escape

    def uniformization_rate(self) -> float:
        diagonal = self.matrix.diagonal()
        return float(-diagonal.min()) if diagonal.size else 0.0


def _assemble(labels: List[Hashable], transitions: Sequence[Tuple[int, int, float]],
              escape: np.ndarray) -> GeneratorMatrix:
    size = len(labels)
    rows = [r for r, _, _ in transitions]
    cols = [c for _, c, _ in transitions]
    rates = [rate for _, _, rate in transitions]
    off_diagonal = sp.coo_matrix((rates, (rows, cols)), shape=(size, size)).tocsr()
    outflow = np.asarray(off_diagonal.sum(axis=1)).ravel() + escape
    matrix = (off_diagonal - sp.diags(outflow)).tocsr()
    matrix.eliminate_zeros()
    return GeneratorMatrix(labels=labels, matrix=matrix, escape=escape)


def _check_bounds(spec: MarkovPrpSpec, truncation: Tuple[int, int]) -> Tuple[int, int]:
    bottom, top = truncation
    if top < bottom:
        raise ModelError(f"Truncation top {top} lies below bottom {bottom}")
    reflection = spec.reflection_level
    if reflection is not None and bottom != reflection:
        raise ModelError(
            f"Truncation bottom {bottom} must equal the reflection level {reflection}"
        )
    return bottom, top


def _check_escape(generator: GeneratorMatrix, escape_tol: Optional[float]) -> GeneratorMatrix:
    if escape_tol is not None and generator.max_escape() > escape_tol:
        worst = generator.labels[int(np.argmax(generator.escape))]
        error_msg = (f"Rate {generator.max_escape():.3e} escapes below the truncation "
                     f"from state {worst!r}; lower the truncation bottom")
        logger.error(error_msg)
        raise TruncationError(error_msg)
    return generator


def build_level_generator(spec: MarkovPrpSpec, truncation: Tuple[int, int],
                          escape_tol: Optional[float] = DEFAULT_ESCAPE_TOL) -> GeneratorMatrix:
    """
    Build the generator of the level process on {bottom, ..., top}.

    Args:
        spec: PRP level-process specification. A reflected spec must use its
              reflection level as truncation bottom.
        truncation: (bottom, top) level range.
        escape_tol: Largest escape rate allowed from any row; None only records it.

    Returns:
        GeneratorMatrix labelled by level.

    Raises:
        ModelError: If the range is empty or conflicts with the reflection level.
        TruncationError: If more than `escape_tol` escapes below the bottom.
    """
    bottom, top = _check_bounds(spec, truncation)
    labels = list(range(bottom, top + 1))
    escape = np.zeros(len(labels))
    transitions = []

    for row, level in enumerate(labels):
        for target, rate in spec.moves(level):
            target = min(target, top)
            if target == level:
                continue
            if target < bottom:
                escape[row] += rate
            else:
                transitions.append((row, target - bottom, rate))

    generator = _assemble(labels, transitions, escape)
    logger.debug(f"Level generator on [{bottom}, {top}] with {generator.matrix.nnz} entries")
    return _check_escape(generator, escape_tol)


def build_joint_inf_generator(spec: MarkovPrpSpec, initial: int,
                              truncation: Tuple[int, int]) -> GeneratorMatrix:
    """
    Build the generator of the (level, running infimum) chain.

    States are pairs (i, m) with bottom <= m <= min(i, initial) and i <= top.
    A move to level j sends (i, m) to (j, min(m, j)). Moves below the bottom are
    recorded as escape (absorption) and are not an error; callers report the
    escaped mass.

    Args:
        spec: PRP specification, reflected or not.
        initial: Initial level, which bounds the infimum coordinate.
        truncation: (bottom, top) level range.

    Returns:
        GeneratorMatrix labelled by (level, infimum) pairs.
    """
    bottom, top = _check_bounds(spec, truncation)
    if not bottom <= initial <= top:
        raise ModelError(f"Initial level {initial} outside truncation [{bottom}, {top}]")

    labels = [(level, low)
              for low in range(bottom, initial + 1)
              for level in range(low, top + 1)]
    position = {label: index for index, label in enumerate(labels)}
    escape = np.zeros(len(labels))
    transitions = []

    moves_by_level = {level: spec.moves(level) for level in range(bottom, top + 1)}
    for row, (level, low) in enumerate(labels):
        for target, rate in moves_by_level[level]:
            target = min(target, top)
            if target == level:
                continue
            if target < bottom:
                escape[row] += rate
                continue
            transitions.append((row, position[(target, min(low, target))], rate))

    generator = _assemble(labels, transitions, escape)
    logger.debug(f"Joint infimum generator with {generator.size} states, initial {initial}")
    return generator


def build_birth_death_generator(spec: BirthDeathSpec, top: Optional[int] = None) -> GeneratorMatrix:
    """Tridiagonal generator of a birth-death chain on {lower, ..., top}."""
    top = spec.top if top is None else top
    if not spec.lower < top:
        raise ModelError(f"Generator top {top} must exceed the lower boundary {spec.lower}")
    levels = range(spec.lower, top + 1)
    births = np.array([spec.birth_rate(n) if n < top else 0.0 for n in levels])
    deaths = np.array([spec.death_rate(n) for n in levels])

    matrix = sp.diags(
        [deaths[1:], -(births + deaths), births[:-1]],
        offsets=[-1, 0, 1],
        format="csr",
    )
    matrix.eliminate_zeros()
    return GeneratorMatrix(labels=list(levels), matrix=matrix, escape=np.zeros(len(levels)))
