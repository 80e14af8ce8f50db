"""
Command runner for the transient queueing toolkit.

This module wires model files, configuration and the numerical modules into
the commands exposed on the command line, and renders their results as
comma-separated tables or a single YAML document.
"""

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from transient_queues.config.config_loader import get_nested_config
from transient_queues.errors import InputError, TruncationError
from transient_queues.factorization.engine import GeneratorPassageLst, transient_pmf
from transient_queues.factorization.verification import (
    DEFAULT_OMEGAS,
    DeviationReport,
    verify_corollary_1,
    verify_corollary_2,
    verify_theorem_1,
    verify_theorem_2,
)
from transient_queues.inversion.euler import euler_invert_vector
from transient_queues.models.generator import build_level_generator
from transient_queues.models.model_file import Model, RbmModel, load_model, model_type
from transient_queues.models.spec import BirthDeathSpec, MarkovPrpSpec, birth_death_to_prp
from transient_queues.oracles.resolvent import level_resolvent, uniformization_pmf
from transient_queues.oracles.simulation import simulate_prp, simulate_rbm
from transient_queues.queues.mms import MmsParams, mms_mean, mms_pmf, mms_to_birth_death, reference_point_law
from transient_queues.rbm.regulated import RbmQuery, rbm_density, rbm_survival, verify_reflected_factorization

# Configure logging
logger = logging.getLogger(__name__)

COMMANDS = ("pmf", "verify", "rbm", "moment", "simulate", "oracle")
IDENTITIES = ("theorem1", "theorem2", "wiener-hopf", "reflected-factorization")
OUTPUT_FORMATS = ("csv", "doc")

# Flags recorded in the manifest when given
OVERRIDE_FLAGS = ("q", "t", "initial", "truncate", "bottom", "level", "identity", "method",
                  "x0", "grid", "reps", "seed", "tol", "threads", "digits")


class CommandError(InputError):
    """Exception raised for invalid command-line requests."""
    pass


@dataclass
class RunManifest:
    """Reproducibility record printed with every result."""

    command: str
    model: Optional[str]
    overrides: Dict[str, Any]
    output_format: str
    seed: Optional[int]
    tolerances: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class CommandResult:
    """Table produced by a command; `passed` is False only for failed verifications."""

    columns: List[str]
    rows: List[List[Any]]
    manifest: RunManifest
    units: Dict[str, str] = field(default_factory=dict)
    passed: bool = True


def _plain(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return repr(complex(value))
    if isinstance(value, tuple):
        return [_plain(item) for item in value]
    return value


def _tolerances(args: Any, config: Dict[str, Any], primary: str) -> Dict[str, float]:
    tolerances = {key: float(value) for key, value in get_nested_config(config, "tolerances", {}).items()}
    if getattr(args, "tol", None) is not None:
        tolerances[primary] = float(args.tol)
    return tolerances


def build_manifest(args: Any, config: Dict[str, Any], tolerances: Dict[str, float]) -> RunManifest:
    overrides = {name: _plain(getattr(args, name)) for name in OVERRIDE_FLAGS
                 if getattr(args, name, None) is not None}
    seed = getattr(args, "seed", None)
    if args.command == "simulate" and seed is None:
        seed = int(get_nested_config(config, "simulation.seed"))
    return RunManifest(
        command=args.command,
        model=getattr(args, "model", None),
        overrides=overrides,
        output_format=args.format or get_nested_config(config, "output.format", "csv"),
        seed=seed,
        tolerances=tolerances,
    )


def _time_point(args: Any, allow_t: bool = True) -> Tuple[Optional[float], Optional[float]]:
    q, t = getattr(args, "q", None), getattr(args, "t", None)
    if (q is None) == (t is None):
        raise CommandError("Give exactly one of --q or --t")
    if t is not None and not allow_t:
        raise CommandError(f"'{args.command}' works at an exponential time only; use --q")
    if q is not None and not q > 0:
        raise CommandError(f"--q must be positive, got {q}")
    if t is not None and not t > 0:
        raise CommandError(f"--t must be positive, got {t}")
    return q, t


def parse_grid(text: str) -> np.ndarray:
    """Parse 'start:stop:step' into the inclusive grid of points."""
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise CommandError(f"Grid must look like start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise CommandError(f"Grid {text!r} needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 12)


def _load(args: Any, allowed: Sequence[str]) -> Model:
    model = load_model(args.model)
    kind = model_type(model)
    if kind not in allowed:
        raise CommandError(f"'{args.command}' does not accept {kind} models; expected one of {list(allowed)}")
    return model


def as_prp(model: Model) -> MarkovPrpSpec:
    """Level-process view of a queueing model; the lower boundary becomes the reflection level."""
    if isinstance(model, MarkovPrpSpec):
        return model
    if isinstance(model, MmsParams):
        model = mms_to_birth_death(model)
    if isinstance(model, BirthDeathSpec):
        return birth_death_to_prp(model)
    raise CommandError(f"No level process for {model_type(model)} models")


def _top(args: Any, config: Dict[str, Any], model: Model) -> int:
    if isinstance(model, MmsParams) and model.capacity is not None:
        return model.capacity
    if isinstance(model, BirthDeathSpec) and model.bounded:
        return model.upper
    if getattr(args, "truncate", None) is not None:
        return args.truncate
    return int(get_nested_config(config, "truncation.top"))


def _bottom(args: Any, spec: MarkovPrpSpec, initial: int, top: int) -> int:
    if spec.reflection_level is not None:
        return spec.reflection_level
    if getattr(args, "bottom", None) is not None:
        return args.bottom
    return initial - top


def pmf_evaluator(model: Model, initial: int, top: int, bottom: Optional[int],
                  tol: float) -> Tuple[List[int], Callable[[complex], np.ndarray]]:
    """
    States and a vectorised evaluator q -> P_initial(Q(e_q) = state) for a model.

    M/M/s and M/M/s/K use the closed forms, birth-death chains the
    reference-point formula with the initial state as reference, and PRP models
    the infimum decomposition with restricted-generator hitting transforms.
    """
    if isinstance(model, MmsParams):
        states = list(range(top + 1))
        return states, lambda q: np.array([mms_pmf(initial, n, model, q) for n in states])
    if isinstance(model, BirthDeathSpec):
        spec = model if model.bounded else BirthDeathSpec(
            birth=model.birth, death=model.death, lower=model.lower, truncation=top)
        if not spec.contains(initial):
            raise CommandError(f"Initial state {initial} outside [{spec.lower}, {spec.top}]")
        return list(range(spec.lower, spec.top + 1)), lambda q: reference_point_law(spec, initial, q)

    spec = as_prp(model)
    low = spec.reflection_level if spec.reflection_level is not None else bottom
    if not low <= initial <= top:
        raise CommandError(f"Initial level {initial} outside [{low}, {top}]")
    k_max = top - initial
    phi = GeneratorPassageLst(spec, bottom=low, top=top + 2 * k_max, checked_top=top + k_max)
    states = list(range(low, top + 1))

    def evaluate(q: complex) -> np.ndarray:
        result = transient_pmf(spec, initial, q, phi, k_max, bottom=low, tol=tol)
        return np.array([result.get(state) for state in states])

    return states, evaluate


def _at_time(evaluate: Callable[[complex], np.ndarray], q: Optional[float], t: Optional[float],
             digits: int) -> np.ndarray:
    if q is not None:
        return np.real_if_close(np.asarray(evaluate(q)))
    return euler_invert_vector(lambda z: np.asarray(evaluate(z)) / z, t, digits)


def _digits(args: Any, config: Dict[str, Any]) -> int:
    if getattr(args, "digits", None) is not None:
        return args.digits
    return int(get_nested_config(config, "inversion.precision_digits"))


def cmd_pmf(args: Any, config: Dict[str, Any], threads: int) -> CommandResult:
    """State probabilities at e_q or, through inversion, at time t."""
    tolerances = _tolerances(args, config, "pmf_sum")
    manifest = build_manifest(args, config, tolerances)
    q, t = _time_point(args)
    model = _load(args, ("birth-death", "mms", "mmsk", "prp"))
    initial = args.initial or 0
    top = _top(args, config, model)
    bottom = _bottom(args, as_prp(model), initial, top) if isinstance(model, MarkovPrpSpec) else None

    states, evaluate = pmf_evaluator(model, initial, top, bottom, tolerances["truncation"])
    probabilities = _at_time(evaluate, q, t, _digits(args, config))
    total = float(np.sum(probabilities))
    logger.info(f"pmf from {initial}: {len(states)} states, total mass {total:.12f}")
    if q is not None and abs(total - 1.0) > tolerances["pmf_sum"]:
        error_msg = f"pmf sums to {total:.12f}; raise --truncate or lower --bottom"
        logger.error(error_msg)
        raise TruncationError(error_msg)

    rows = [[state, float(p)] for state, p in zip(states, probabilities)]
    return CommandResult(columns=["state", "probability"], rows=rows, manifest=manifest,
                         units={"state": "customers", "probability": "1"})


def _report_result(reports: List[DeviationReport], manifest: RunManifest) -> CommandResult:
    rows = [[r.identity, r.passed, r.max_deviation, r.tolerance, _plain(r.details.get("worst_at"))]
            for r in reports]
    return CommandResult(columns=["identity", "passed", "max_deviation", "tolerance", "worst_at"],
                         rows=rows, manifest=manifest, passed=all(r.passed for r in reports),
                         units={"max_deviation": "probability", "tolerance": "probability"})


def cmd_verify(args: Any, config: Dict[str, Any], threads: int) -> CommandResult:
    """Check one of the factorization identities on a model."""
    tolerances = _tolerances(args, config, "identity")
    manifest = build_manifest(args, config, tolerances)
    q, _ = _time_point(args, allow_t=False)
    identity = args.identity
    if identity not in IDENTITIES:
        raise CommandError(f"Unknown identity {identity!r}, expected one of {IDENTITIES}")
    model = _load(args, ("birth-death", "mms", "mmsk", "prp", "rbm"))
    tol, truncation_tol = tolerances["identity"], tolerances["truncation"]

    if isinstance(model, RbmModel):
        if identity != "reflected-factorization":
            raise CommandError("rbm models support only the reflected-factorization identity")
        x0 = args.x0 if args.x0 is not None else model.x0
        return _report_result([verify_reflected_factorization(x0, q, DEFAULT_OMEGAS, tol=tol)], manifest)

    spec = as_prp(model)
    top = _top(args, config, model)
    free = spec.unreflected()
    if identity == "theorem1":
        level = args.level or 0
        initial = args.initial if args.initial is not None else level
        report = verify_theorem_1(free, level, q, initial, top, tol=tol, truncation_tol=truncation_tol)
    elif identity == "theorem2":
        report = verify_theorem_2(free, args.initial or 0, q, top, tol=tol, truncation_tol=truncation_tol)
    elif identity == "wiener-hopf":
        depth = -args.bottom if args.bottom is not None else None
        report = verify_corollary_1(free, q, top, depth=depth, tol=tol, truncation_tol=truncation_tol)
    else:
        reflected = spec if spec.reflection_level is not None else spec.reflected(0)
        initial = args.initial if args.initial is not None else reflected.reflection_level
        report = verify_corollary_2(reflected, initial, q, top, tol=tol, truncation_tol=truncation_tol)
    return _report_result([report], manifest)


def _rbm_x0(args: Any) -> float:
    x0 = getattr(args, "x0", None)
    if getattr(args, "model", None):
        model = _load(args, ("rbm",))
        x0 = model.x0 if x0 is None else x0
    return 0.0 if x0 is None else x0


def cmd_rbm(args: Any, config: Dict[str, Any], threads: int) -> CommandResult:
    """Density and survival of regulated Brownian motion on a grid."""
    tolerances = _tolerances(args, config, "truncation")
    manifest = build_manifest(args, config, tolerances)
    q, t = _time_point(args)
    x0 = _rbm_x0(args)
    grid = parse_grid(args.grid or f"0:{x0 + 5.0}:0.1")

    def evaluate(z: complex) -> np.ndarray:
        query = RbmQuery(x0=x0, q=z)
        return np.array([[rbm_density(x, query), rbm_survival(x, query)] for x in grid])

    values = _at_time(evaluate, q, t, _digits(args, config))
    rows = [[float(x), float(density), float(survival)] for x, (density, survival) in zip(grid, values)]
    return CommandResult(columns=["x", "density", "survival"], rows=rows, manifest=manifest,
                         units={"x": "level", "density": "1/level", "survival": "probability"})


def cmd_moment(args: Any, config: Dict[str, Any], threads: int) -> CommandResult:
    """Mean queue length at e_q or at time t."""
    tolerances = _tolerances(args, config, "truncation")
    manifest = build_manifest(args, config, tolerances)
    q, t = _time_point(args)
    model = _load(args, ("birth-death", "mms", "mmsk", "prp"))
    initial = args.initial or 0

    if isinstance(model, MmsParams) and model.capacity is None:
        def evaluate(z: complex) -> np.ndarray:
            return np.array([mms_mean(initial, model, z)])
    else:
        top = _top(args, config, model)
        bottom = _bottom(args, as_prp(model), initial, top) if isinstance(model, MarkovPrpSpec) else None
        states, pmf = pmf_evaluator(model, initial, top, bottom, tolerances["truncation"])
        levels = np.asarray(states, dtype=float)

        def evaluate(z: complex) -> np.ndarray:
            return np.array([np.dot(levels, pmf(z))])

    mean = float(np.real(_at_time(evaluate, q, t, _digits(args, config))[0]))
    return CommandResult(columns=["initial", "mean"], rows=[[initial, mean]], manifest=manifest,
                         units={"initial": "customers", "mean": "customers"})


def cmd_simulate(args: Any, config: Dict[str, Any], threads: int) -> CommandResult:
    """Monte Carlo estimates with 99% half-widths."""
    tolerances = _tolerances(args, config, "truncation")
    manifest = build_manifest(args, config, tolerances)
    q, _ = _time_point(args, allow_t=False)
    reps = args.reps or int(get_nested_config(config, "simulation.replications"))
    seed = manifest.seed
    model = _load(args, ("birth-death", "mms", "mmsk", "prp", "rbm"))

    if isinstance(model, RbmModel):
        x0 = args.x0 if args.x0 is not None else model.x0
        dt = float(get_nested_config(config, "simulation.dt"))
        estimate = simulate_rbm(x0, q, reps, dt, seed, threads=threads)
        grid = parse_grid(args.grid or f"0:{x0 + 5.0}:0.25")
        bins = estimate.histogram("level", grid)
        rows = [["level", left, right, p, half] for (left, right), p, half in bins.to_rows()]
        rows.append(["infimum-atom", 0.0, 0.0, estimate.get("infimum_atom"),
                     estimate.half_width("infimum_atom")])
        return CommandResult(columns=["quantity", "left", "right", "probability", "half_width"],
                             rows=rows, manifest=manifest,
                             units={"left": "level", "right": "level", "probability": "1",
                                    "half_width": "probability"})

    spec = as_prp(model)
    initial = args.initial or 0
    estimate = simulate_prp(spec, initial, q, reps, seed, threads=threads)
    rows = [[level, infimum, p, half] for (level, infimum), p, half in estimate.to_rows()]
    return CommandResult(columns=["level", "infimum", "probability", "half_width"], rows=rows,
                         manifest=manifest,
                         units={"level": "customers", "infimum": "customers", "probability": "1",
                                "half_width": "probability"})


def cmd_oracle(args: Any, config: Dict[str, Any], threads: int) -> CommandResult:
    """Truncated-chain pmf by resolvent solve (at e_q) or uniformization (at t)."""
    tolerances = _tolerances(args, config, "truncation")
    manifest = build_manifest(args, config, tolerances)
    model = _load(args, ("birth-death", "mms", "mmsk", "prp"))
    spec = as_prp(model)
    initial = args.initial or 0
    top = _top(args, config, model)
    bottom = _bottom(args, spec, initial, top)
    method = args.method or "resolvent"

    if method == "resolvent":
        q, _ = _time_point(args, allow_t=False)
        extension = int(get_nested_config(config, "truncation.extension"))
        result = level_resolvent(spec, initial, q, top, bottom=bottom, extension=extension,
                                 tol=tolerances["truncation"])
    elif method == "uniformization":
        if args.t is None or args.q is not None:
            raise CommandError("The uniformization oracle needs --t and no --q")
        generator = build_level_generator(spec, (bottom, top), escape_tol=None)
        result = uniformization_pmf(generator, initial, args.t)
    else:
        raise CommandError(f"Unknown oracle method {method!r}")

    rows = [[label, float(np.real(p))] for label, p in zip(result.labels, result.probabilities)]
    return CommandResult(columns=["state", "probability"], rows=rows, manifest=manifest,
                         units={"state": "customers", "probability": "1"})


COMMAND_HANDLERS = {
    "pmf": cmd_pmf,
    "verify": cmd_verify,
    "rbm": cmd_rbm,
    "moment": cmd_moment,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
}


def run_command(args: Any, config: Dict[str, Any], threads: int) -> CommandResult:
    """
    Run the command named by `args.command`.

    Args:
        args: Parsed command-line arguments.
        config: Configuration dictionary.
        threads: Worker threads for simulation.

    Returns:
        CommandResult with the table and manifest.

    Raises:
        CommandError: If the command is unknown or its flags are inconsistent.
    """
    handler = COMMAND_HANDLERS.get(args.command)
    if handler is None:
        raise CommandError(f"Unknown command {args.command!r}, expected one of {COMMANDS}")
    logger.info(f"Running '{args.command}' on {getattr(args, 'model', None) or 'built-in model'}")
    return handler(args, config, threads)


def render(result: CommandResult) -> str:
    """Render a result in the manifest's output format."""
    manifest = result.manifest.to_dict()
    if result.manifest.output_format == "doc":
        document = {
            "manifest": manifest,
            "passed": result.passed,
            "columns": result.columns,
            "units": result.units,
            "rows": [[_plain(value) for value in row] for row in result.rows],
        }
        return yaml.safe_dump(document, sort_keys=False)

    buffer = io.StringIO()
    for key, value in manifest.items():
        buffer.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    buffer.write(f"# units: {json.dumps(result.units, sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in (_plain(x) for x in row)])
    return buffer.getvalue()
