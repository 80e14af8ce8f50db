"""
Declarative specifications of Markovian PRP systems and birth-death chains.

Rates and jump-size distributions are level-indexed maps. `RateMap` and
`PmfMap` are the serializable forms used by model files; any callable with the
same signature is accepted by the numerical code.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from transient_queues.errors import InputError

# Configure logging
logger = logging.getLogger(__name__)

# Jump-size pmfs are cut where the cumulative mass reaches 1 - PMF_TAIL_MASS
PMF_TAIL_MASS = 1e-12

# Input pmfs must sum to one within this tolerance before renormalization
PMF_SUM_TOLERANCE = 1e-9

RATE_FORMS = ("constant", "array", "linear", "linear-capped")
PMF_FORMS = ("fixed", "by-level", "clear-to")


class ModelError(InputError):
    """Exception raised for invalid model specifications."""
    pass


def _check_rate(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        error_msg = f"{what} must be finite and nonnegative, got {value}"
        logger.error(error_msg)
        raise ModelError(error_msg)
    return value


@dataclass(frozen=True)
class RateMap:
    """
    Level-indexed transition rate.

    Forms:
        constant: `rate` at every level.
        array: `values[i]` at level `offset + i`, `fill` elsewhere.
        linear: `rate * max(level - offset, 0)` (infinite-server death rates).
        linear-capped: `rate * min(max(level - offset, 0), servers)`.
    """

    form: str = "constant"
    rate: float = 0.0
    values: Tuple[float, ...] = ()
    offset: int = 0
    fill: float = 0.0
    servers: Optional[int] = None

    def __post_init__(self):
        if self.form not in RATE_FORMS:
            raise ModelError(f"Unknown rate form '{self.form}', expected one of {RATE_FORMS}")
        _check_rate(self.rate, "rate")
        _check_rate(self.fill, "fill rate")
        for value in self.values:
            _check_rate(value, "array rate")
        if self.form == "linear-capped" and (self.servers is None or self.servers < 1):
            raise ModelError("linear-capped rate requires a positive 'servers' count")

    @classmethod
    def constant(cls, rate: float) -> "RateMap":
        return cls(form="constant", rate=rate)

    @classmethod
    def from_values(cls, values: Sequence[float], offset: int = 0, fill: float = 0.0) -> "RateMap":
        return cls(form="array", values=tuple(float(v) for v in values), offset=offset, fill=fill)

    @classmethod
    def linear(cls, rate: float, offset: int = 0) -> "RateMap":
        return cls(form="linear", rate=rate, offset=offset)

    @classmethod
    def linear_capped(cls, rate: float, servers: int, offset: int = 0) -> "RateMap":
        return cls(form="linear-capped", rate=rate, servers=servers, offset=offset)

    def __call__(self, level: int) -> float:
        if self.form == "constant":
            return self.rate
        if self.form == "array":
            index = level - self.offset
            if 0 <= index < len(self.values):
                return self.values[index]
            return self.fill
        busy = max(level - self.offset, 0)
        if self.form == "linear-capped":
            busy = min(busy, self.servers)
        return self.rate * busy


@dataclass(frozen=True)
class PmfMap:
    """
    Level-indexed jump-size distribution on {1, 2, ...}.

    Entry i of a pmf tuple is the probability of size i + 1.

    Forms:
        fixed: `probabilities` at every level.
        by-level: `levels` maps a level to its pmf, `probabilities` elsewhere.
        clear-to: point mass at size `level - floor` (removal down to `floor`).
    """

    form: str = "fixed"
    probabilities: Tuple[float, ...] = (1.0,)
    levels: Tuple[Tuple[int, Tuple[float, ...]], ...] = ()
    floor: int = 0

    def __post_init__(self):
        if self.form not in PMF_FORMS:
            raise ModelError(f"Unknown pmf form '{self.form}', expected one of {PMF_FORMS}")
        object.__setattr__(self, "probabilities", normalize_pmf(self.probabilities))
        object.__setattr__(
            self, "levels",
            tuple(sorted((int(level), normalize_pmf(pmf)) for level, pmf in self.levels))
        )

    @classmethod
    def fixed(cls, probabilities: Sequence[float]) -> "PmfMap":
        return cls(form="fixed", probabilities=tuple(probabilities))

    @classmethod
    def by_level(cls, levels: Dict[int, Sequence[float]],
                 default: Sequence[float] = (1.0,)) -> "PmfMap":
        return cls(form="by-level", probabilities=tuple(default),
                   levels=tuple((level, tuple(pmf)) for level, pmf in levels.items()))

    @classmethod
    def clear_to(cls, floor: int) -> "PmfMap":
        return cls(form="clear-to", floor=floor)

    def __call__(self, level: int) -> Tuple[float, ...]:
        if self.form == "clear-to":
            size = max(level - self.floor, 1)
            return (0.0,) * (size - 1) + (1.0,)
        if self.form == "by-level":
            for key, pmf in self.levels:
                if key == level:
                    return pmf
        return self.probabilities


def normalize_pmf(probabilities: Iterable[float]) -> Tuple[float, ...]:
    """
    Validate a jump-size pmf, cut its tail and renormalize.

    Args:
        probabilities: Masses of sizes 1, 2, ...

    Returns:
        Tuple of masses summing to one.

    Raises:
        ModelError: If a mass is negative or the masses do not sum to one.
    """
    masses = [_check_rate(p, "pmf mass") for p in probabilities]
    total = math.fsum(masses)
    if not masses or abs(total - 1.0) > PMF_SUM_TOLERANCE:
        error_msg = f"Jump-size pmf must sum to 1, got {total!r}"
        logger.error(error_msg)
        raise ModelError(error_msg)

    cumulative = 0.0
    cut = len(masses)
    for index, mass in enumerate(masses):
        cumulative += mass
        if cumulative >= 1.0 - PMF_TAIL_MASS:
            cut = index + 1
            break
    kept = masses[:cut]
    kept_total = math.fsum(kept)
    # Already-normalized input is returned as is so model files round-trip exactly
    if cut == len(masses) and abs(kept_total - 1.0) <= 1e-15:
        return tuple(kept)
    return tuple(m / kept_total for m in kept)


RateLike = Callable[[int], float]
PmfLike = Callable[[int], Sequence[float]]

ZERO_RATE = RateMap.constant(0.0)
UNIT_JUMP = PmfMap.fixed((1.0,))


@dataclass(frozen=True)
class BirthDeathSpec:
    """
    Birth-death chain on {lower, ..., upper}.

    When `upper` is None the chain is unbounded and numerical routines work
    on {lower, ..., truncation}.
    """

    birth: RateLike
    death: RateLike
    lower: int = 0
    upper: Optional[int] = None
    truncation: int = 200

    def __post_init__(self):
        if self.upper is not None and self.upper <= self.lower:
            raise ModelError(f"upper ({self.upper}) must exceed lower ({self.lower})")
        if self.upper is None and self.truncation <= self.lower:
            raise ModelError(f"truncation ({self.truncation}) must exceed lower ({self.lower})")

    @property
    def top(self) -> int:
        """Highest level used by numerical routines."""
        return self.upper if self.upper is not None else self.truncation

    @property
    def bounded(self) -> bool:
        return self.upper is not None

    def birth_rate(self, n: int) -> float:
        if n < self.lower or (self.upper is not None and n >= self.upper):
            return 0.0
        return _check_rate(self.birth(n), f"birth rate at {n}")

    def death_rate(self, n: int) -> float:
        if n <= self.lower or (self.upper is not None and n > self.upper):
            return 0.0
        return _check_rate(self.death(n), f"death rate at {n}")

    def contains(self, n: int) -> bool:
        return self.lower <= n <= self.top


@dataclass(frozen=True)
class MarkovPrpSpec:
    """
    Level process of a PRP system with exponential work.

    Single arrivals move the level up by one, batches up by a random size,
    service completions down by one and catastrophes down by a random size.
    With a reflection level l, downward moves that would end at or below l end
    at l, and nothing but arrivals happens at l.
    """

    single_arrival: RateLike = ZERO_RATE
    batch_rate: RateLike = ZERO_RATE
    batch_sizes: PmfLike = UNIT_JUMP
    service: RateLike = ZERO_RATE
    catastrophe_rate: RateLike = ZERO_RATE
    catastrophe_sizes: PmfLike = UNIT_JUMP
    reflection_level: Optional[int] = None

    def reflected(self, level: int) -> "MarkovPrpSpec":
        return replace(self, reflection_level=level)

    def unreflected(self) -> "MarkovPrpSpec":
        return replace(self, reflection_level=None)

    def upward_moves(self, level: int) -> List[Tuple[int, float]]:
        """Upward (target, rate) pairs out of `level`."""
        moves: Dict[int, float] = {}
        single = _check_rate(self.single_arrival(level), f"single-arrival rate at {level}")
        if single > 0:
            moves[level + 1] = single
        batch = _check_rate(self.batch_rate(level), f"batch rate at {level}")
        if batch > 0:
            for index, mass in enumerate(self.batch_sizes(level)):
                if mass > 0:
                    target = level + index + 1
                    moves[target] = moves.get(target, 0.0) + batch * mass
        return sorted(moves.items())

    def downward_moves(self, level: int) -> List[Tuple[int, float]]:
        """Downward (target, rate) pairs out of `level`, reflection applied."""
        reflection = self.reflection_level
        if reflection is not None and level <= reflection:
            return []
        moves: Dict[int, float] = {}
        service = _check_rate(self.service(level), f"service rate at {level}")
        if service > 0:
            moves[level - 1] = service
        catastrophe = _check_rate(self.catastrophe_rate(level), f"catastrophe rate at {level}")
        if catastrophe > 0:
            for index, mass in enumerate(self.catastrophe_sizes(level)):
                if mass > 0:
                    target = level - index - 1
                    moves[target] = moves.get(target, 0.0) + catastrophe * mass
        if reflection is not None:
            lumped: Dict[int, float] = {}
            for target, rate in moves.items():
                target = max(target, reflection)
                lumped[target] = lumped.get(target, 0.0) + rate
            moves = lumped
        return sorted(moves.items())

    def moves(self, level: int) -> List[Tuple[int, float]]:
        return self.downward_moves(level) + self.upward_moves(level)

    def is_state_independent(self, levels: Iterable[int]) -> bool:
        """
        Check that rates and jump pmfs are identical across `levels`.

        Levels at or below the reflection level are skipped.
        """
        signature = None
        for level in levels:
            if self.reflection_level is not None and level <= self.reflection_level:
                continue
            current = (
                self.single_arrival(level), self.batch_rate(level), tuple(self.batch_sizes(level)),
                self.service(level), self.catastrophe_rate(level), tuple(self.catastrophe_sizes(level)),
            )
            if signature is None:
                signature = current
            elif not _same_signature(signature, current):
                return False
        return True


def _same_signature(first, second, tol: float = 1e-14) -> bool:
    for a, b in zip(first, second):
        if isinstance(a, tuple):
            if len(a) != len(b) or any(abs(x - y) > tol for x, y in zip(a, b)):
                return False
        elif abs(a - b) > tol:
            return False
    return True


def birth_death_to_prp(spec: BirthDeathSpec) -> MarkovPrpSpec:
    """
    Express a birth-death chain as a PRP level process.

    Births are single arrivals, deaths are service completions and the lower
    boundary becomes the reflection level. Births at a finite upper boundary are
    removed by truncating generators at `spec.top`.
    """
    return MarkovPrpSpec(
        single_arrival=spec.birth_rate,
        service=spec.death_rate,
        reflection_level=spec.lower,
    )
