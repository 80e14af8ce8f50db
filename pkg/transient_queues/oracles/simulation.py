"""
Monte Carlo oracles: PRP level paths and regulated Brownian motion, each
killed at an independent exponential time.

Replications are split into fixed-size blocks, each with its own child stream
of `SeedSequence(seed)`, so results do not depend on the number of threads.
"""

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from transient_queues.models.spec import MarkovPrpSpec
from transient_queues.oracles.resolvent import OracleError
from transient_queues.transforms.core import TransformArgument

# Configure logging
logger = logging.getLogger(__name__)

CONFIDENCE = 0.99
Z_VALUE = float(norm.ppf(0.5 + CONFIDENCE / 2))
BLOCK_SIZE = 10_000
MAX_EVENTS = 10_000_000


class SimulationError(OracleError):
    """Exception raised when a simulated path exceeds the event cap."""
    pass


@dataclass
class SimulationEstimate:
    """Empirical probabilities with 99% normal-approximation half-widths."""

    estimates: Dict[Hashable, float]
    half_widths: Dict[Hashable, float]
    replications: int
    seed: int
    samples: Dict[str, np.ndarray] = field(default_factory=dict)

    def get(self, key: Hashable) -> float:
        return self.estimates.get(key, 0.0)

    def half_width(self, key: Hashable) -> float:
        return self.half_widths.get(key, _half_width(0.0, self.replications))

    def covers(self, key: Hashable, value: float) -> bool:
        """True if `value` lies in the confidence interval around the estimate."""
        return abs(self.get(key) - value) <= self.half_width(key)

    def marginal(self, position: int) -> "SimulationEstimate":
        """Collapse tuple keys onto one coordinate, e.g. the level of (level, infimum)."""
        counts = Counter()
        for key, value in self.estimates.items():
            counts[key[position]] += value
        return _from_frequencies(dict(counts), self.replications, self.seed)

    def histogram(self, name: str, edges: Sequence[float]) -> "SimulationEstimate":
        """Bin masses of a stored sample keyed by (left, right) edges."""
        values = self.samples[name]
        counts, _ = np.histogram(values, bins=np.asarray(edges, dtype=float))
        frequencies = {
            (float(left), float(right)): count / self.replications
            for left, right, count in zip(edges[:-1], edges[1:], counts)
        }
        return _from_frequencies(frequencies, self.replications, self.seed)

    def to_rows(self) -> List[Tuple[Hashable, float, float]]:
        return [(key, self.estimates[key], self.half_widths[key]) for key in sorted(self.estimates)]


def _half_width(p: float, n: int) -> float:
    return Z_VALUE * math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _from_frequencies(frequencies: Dict[Hashable, float], replications: int,
                      seed: int, samples: Optional[Dict[str, np.ndarray]] = None) -> SimulationEstimate:
    return SimulationEstimate(
        estimates=frequencies,
        half_widths={key: _half_width(p, replications) for key, p in frequencies.items()},
        replications=replications,
        seed=seed,
        samples=samples or {},
    )


def _blocks(replications: int, seed: int) -> List[Tuple[int, np.random.SeedSequence]]:
    count = math.ceil(replications / BLOCK_SIZE)
    children = np.random.SeedSequence(seed).spawn(count)
    sizes = [BLOCK_SIZE] * (count - 1) + [replications - BLOCK_SIZE * (count - 1)]
    return list(zip(sizes, children))


def _run_blocks(worker, replications: int, seed: int, threads: int) -> list:
    blocks = _blocks(replications, seed)
    if threads <= 1 or len(blocks) == 1:
        return [worker(size, child) for size, child in blocks]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(lambda block: worker(*block), blocks))


class _MoveTable:
    """Per-level cumulative jump probabilities, built on first use."""

    def __init__(self, spec: MarkovPrpSpec):
        self.spec = spec
        self._table: Dict[int, Tuple[np.ndarray, np.ndarray, float]] = {}

    def __call__(self, level: int) -> Tuple[np.ndarray, np.ndarray, float]:
        entry = self._table.get(level)
        if entry is None:
            moves = self.spec.moves(level)
            targets = np.array([target for target, _ in moves], dtype=np.int64)
            rates = np.array([rate for _, rate in moves], dtype=float)
            total = float(rates.sum())
            cumulative = np.cumsum(rates) / total if total > 0 else rates
            entry = (targets, cumulative, total)
            self._table[level] = entry
        return entry


def simulate_prp(spec: MarkovPrpSpec, initial: int, q: float, replications: int, seed: int,
                 threads: int = 1, max_events: int = MAX_EVENTS) -> SimulationEstimate:
    """
    Estimate the joint law of (Q(e_q), inf_{[0, e_q]} Q) from `initial`.

    Each path draws e_q once and runs the embedded jump chain with competing
    exponential clocks until the next holding time overruns the remaining
    horizon. Keys of the estimate are (level, infimum).

    Raises:
        SimulationError: If a path needs more than `max_events` jumps.
    """
    argument = TransformArgument.coerce(q)
    if not argument.is_real:
        raise OracleError("Simulation needs a real killing rate")
    if replications < 1:
        raise OracleError(f"Replications must be positive, got {replications}")
    rate = float(argument.scalar)

    def worker(size: int, child: np.random.SeedSequence) -> Counter:
        table = _MoveTable(spec)
        rng = np.random.default_rng(child)
        levels = np.full(size, initial, dtype=np.int64)
        lows = levels.copy()
        remaining = rng.exponential(1.0 / rate, size)
        active = np.arange(size)
        events = 0
        while active.size:
            events += 1
            if events > max_events:
                error_msg = f"Path exceeded {max_events} events before e_q; check the rates"
                logger.error(error_msg)
                raise SimulationError(error_msg)
            current = levels[active]
            uniforms = rng.random(active.size)
            holding = rng.exponential(1.0, active.size)
            finished = np.zeros(active.size, dtype=bool)
            for level in np.unique(current):
                members = np.nonzero(current == level)[0]
                targets, cumulative, total = table(int(level))
                if total == 0:
                    finished[members] = True
                    continue
                paths = active[members]
                waits = holding[members] / total
                stop = waits >= remaining[paths]
                finished[members[stop]] = True
                moving = members[~stop]
                if moving.size:
                    moved = active[moving]
                    remaining[moved] -= waits[~stop]
                    choice = np.searchsorted(cumulative, uniforms[moving], side="right")
                    new_levels = targets[np.minimum(choice, len(targets) - 1)]
                    levels[moved] = new_levels
                    lows[moved] = np.minimum(lows[moved], new_levels)
            active = active[~finished]
        return Counter(zip(levels.tolist(), lows.tolist()))

    counts = Counter()
    for block in _run_blocks(worker, replications, seed, threads):
        counts.update(block)
    frequencies = {key: count / replications for key, count in sorted(counts.items())}
    logger.info(f"Simulated {replications} PRP paths from {initial} at q={rate}: "
                f"{len(frequencies)} distinct (level, infimum) cells")
    return _from_frequencies(frequencies, replications, seed)


def simulate_rbm(x0: float, q: float, replications: int, dt: float, seed: int,
                 threads: int = 1, bridge: bool = True) -> SimulationEstimate:
    """
    Sample (R(e_q), inf R) for regulated Brownian motion with drift -1 from x0.

    The free path X is advanced by exact Gaussian increments of length dt and
    regulated as R = X - min(0, min X). With `bridge` the running minimum
    includes the Brownian-bridge minimum inside each step; without it only grid
    points count (plain Euler regulator). e_q is drawn exactly per path.

    The estimate holds the fraction of paths whose infimum reaches 0 under
    "infimum_atom"; raw samples are stored under "level" and "infimum".
    """
    argument = TransformArgument.coerce(q)
    if not argument.is_real:
        raise OracleError("Simulation needs a real killing rate")
    q = float(argument.scalar)
    if dt <= 0:
        raise OracleError(f"Time step must be positive, got {dt}")
    if x0 < 0:
        raise OracleError(f"Initial level must be nonnegative, got {x0}")
    if replications < 1:
        raise OracleError(f"Replications must be positive, got {replications}")

    def worker(size: int, child: np.random.SeedSequence) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(child)
        position = np.full(size, float(x0))
        minimum = position.copy()
        remaining = rng.exponential(1.0 / q, size)
        active = np.arange(size)
        while active.size:
            step = np.minimum(dt, remaining[active])
            start = position[active]
            end = start - step + np.sqrt(step) * rng.standard_normal(active.size)
            if bridge:
                uniforms = rng.random(active.size)
                low = 0.5 * (start + end - np.sqrt((end - start) ** 2 - 2.0 * step * np.log(uniforms)))
            else:
                low = end
            position[active] = end
            minimum[active] = np.minimum(minimum[active], low)
            remaining[active] -= step
            active = active[remaining[active] > 0]
        level = position - np.minimum(0.0, minimum)
        return level, np.maximum(minimum, 0.0)

    results = _run_blocks(worker, replications, seed, threads)
    levels = np.concatenate([level for level, _ in results])
    infima = np.concatenate([infimum for _, infimum in results])
    atom = float(np.mean(infima == 0.0))
    logger.info(f"Simulated {replications} regulated Brownian paths from x0={x0}, q={q}, dt={dt}")
    return _from_frequencies({"infimum_atom": atom}, replications, seed,
                             samples={"level": levels, "infimum": infima})
