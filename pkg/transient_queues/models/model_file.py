"""
Model file format.

A model file is a single YAML document with a `type` field:

    type: prp              # prp | birth-death | mms | mmsk | rbm
    reflection_level: 0    # prp only, optional
    single_arrival: 1.0
    batch_rate: {constant: 0.5}
    batch_sizes: [0.5, 0.5]
    service: {linear-capped: {rate: 1.0, servers: 3}}
    catastrophe_rate: [0.0, 0.2, 0.2]
    catastrophe_sizes: {clear-to: 0}

Rates are a number, an array (level i at index i), or one of
`{constant: r}`, `{values: [...], offset: n, fill: r}`, `{linear: r, offset: n}`,
`{linear-capped: {rate: r, servers: s, offset: n}}`.
Jump-size pmfs (mass of size 1, 2, ...) are an array,
`{by-level: {level: [...]}, default: [...]}` or `{clear-to: floor}`.

birth-death: `birth`, `death`, `lower`, `upper` (optional), `truncation`.
mms / mmsk: `lam`, `mu`, `servers`, `truncation`; mmsk also `capacity`.
rbm: `x0` (drift -1 and unit variance are fixed).
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Union

import yaml

from transient_queues.errors import InputError
from transient_queues.models.spec import (
    BirthDeathSpec,
    MarkovPrpSpec,
    ModelError,
    PmfMap,
    RateMap,
    UNIT_JUMP,
    ZERO_RATE,
)
from transient_queues.queues.mms import MmsParams, QueueModelError

# Configure logging
logger = logging.getLogger(__name__)

MODEL_TYPES = ("prp", "birth-death", "mms", "mmsk", "rbm")

PRP_RATE_FIELDS = ("single_arrival", "batch_rate", "service", "catastrophe_rate")
PRP_PMF_FIELDS = ("batch_sizes", "catastrophe_sizes")


class ModelFileError(InputError):
    """Exception raised for model files that violate the schema."""
    pass


@dataclass(frozen=True)
class RbmModel:
    """Regulated Brownian motion with drift -1 and unit variance started at x0."""

    x0: float = 0.0


Model = Union[MarkovPrpSpec, BirthDeathSpec, MmsParams, RbmModel]


def model_type(model: Model) -> str:
    if isinstance(model, MarkovPrpSpec):
        return "prp"
    if isinstance(model, BirthDeathSpec):
        return "birth-death"
    if isinstance(model, MmsParams):
        return "mms" if model.capacity is None else "mmsk"
    if isinstance(model, RbmModel):
        return "rbm"
    raise ModelFileError(f"Cannot serialize model of type {type(model).__name__}")


def _fail(message: str) -> None:
    logger.error(message)
    raise ModelFileError(message)


def _parse_rate(value: Any, where: str) -> RateMap:
    if isinstance(value, bool):
        _fail(f"{where}: expected a rate, got {value!r}")
    if isinstance(value, (int, float)):
        return RateMap.constant(float(value))
    if isinstance(value, list):
        return RateMap.from_values(value)
    if not isinstance(value, dict) or not value:
        _fail(f"{where}: expected a number, array or named rate form, got {value!r}")

    offset = int(value.get("offset", 0))
    if "constant" in value:
        return RateMap.constant(float(value["constant"]))
    if "values" in value:
        return RateMap.from_values(value["values"], offset=offset, fill=float(value.get("fill", 0.0)))
    if "linear" in value:
        return RateMap.linear(float(value["linear"]), offset=offset)
    if "linear-capped" in value:
        body = value["linear-capped"]
        if not isinstance(body, dict) or "rate" not in body or "servers" not in body:
            _fail(f"{where}: linear-capped needs 'rate' and 'servers'")
        return RateMap.linear_capped(float(body["rate"]), int(body["servers"]),
                                     offset=int(body.get("offset", 0)))
    _fail(f"{where}: unknown rate form {sorted(value)}")


def _parse_pmf(value: Any, where: str) -> PmfMap:
    if isinstance(value, list):
        return PmfMap.fixed(value)
    if isinstance(value, dict) and "clear-to" in value:
        return PmfMap.clear_to(int(value["clear-to"]))
    if isinstance(value, dict) and "by-level" in value:
        levels = value["by-level"]
        if not isinstance(levels, dict):
            _fail(f"{where}: by-level must map levels to arrays")
        return PmfMap.by_level({int(level): pmf for level, pmf in levels.items()},
                               default=value.get("default", [1.0]))
    _fail(f"{where}: expected an array, by-level or clear-to pmf, got {value!r}")


def _dump_rate(rate: Any, where: str) -> Any:
    if not isinstance(rate, RateMap):
        _fail(f"{where}: only RateMap rates can be written to a model file")
    if rate.form == "constant":
        return {"constant": rate.rate}
    if rate.form == "array":
        if rate.offset == 0 and rate.fill == 0.0:
            return list(rate.values)
        return {"values": list(rate.values), "offset": rate.offset, "fill": rate.fill}
    if rate.form == "linear":
        return {"linear": rate.rate, "offset": rate.offset}
    return {"linear-capped": {"rate": rate.rate, "servers": rate.servers, "offset": rate.offset}}


def _dump_pmf(pmf: Any, where: str) -> Any:
    if not isinstance(pmf, PmfMap):
        _fail(f"{where}: only PmfMap distributions can be written to a model file")
    if pmf.form == "fixed":
        return list(pmf.probabilities)
    if pmf.form == "clear-to":
        return {"clear-to": pmf.floor}
    return {
        "by-level": {level: list(masses) for level, masses in pmf.levels},
        "default": list(pmf.probabilities),
    }


def _require(document: Dict[str, Any], key: str, kind: str) -> Any:
    if key not in document:
        _fail(f"{kind} model is missing required field '{key}'")
    return document[key]


def parse_model(document: Dict[str, Any]) -> Model:
    """
    Build a model from a parsed document.

    Raises:
        ModelFileError: If the document violates the schema or the model is invalid.
    """
    if not isinstance(document, dict):
        _fail("A model file must contain a mapping")
    kind = document.get("type")
    if kind not in MODEL_TYPES:
        _fail(f"Unknown model type {kind!r}, expected one of {MODEL_TYPES}")

    try:
        if kind == "prp":
            known = {"type", "reflection_level", *PRP_RATE_FIELDS, *PRP_PMF_FIELDS}
            unknown = set(document) - known
            if unknown:
                _fail(f"prp model has unknown fields {sorted(unknown)}")
            fields = {name: _parse_rate(document[name], name) for name in PRP_RATE_FIELDS if name in document}
            fields.update({name: _parse_pmf(document[name], name) for name in PRP_PMF_FIELDS if name in document})
            reflection = document.get("reflection_level")
            return MarkovPrpSpec(reflection_level=None if reflection is None else int(reflection), **fields)
        if kind == "birth-death":
            upper = document.get("upper")
            return BirthDeathSpec(
                birth=_parse_rate(_require(document, "birth", kind), "birth"),
                death=_parse_rate(_require(document, "death", kind), "death"),
                lower=int(document.get("lower", 0)),
                upper=None if upper is None else int(upper),
                truncation=int(document.get("truncation", 200)),
            )
        if kind in ("mms", "mmsk"):
            capacity = document.get("capacity")
            if kind == "mmsk" and capacity is None:
                _fail("mmsk model is missing required field 'capacity'")
            if kind == "mms" and capacity is not None:
                _fail("mms model cannot set 'capacity'; use type mmsk")
            return MmsParams(
                lam=float(_require(document, "lam", kind)),
                mu=float(_require(document, "mu", kind)),
                servers=int(document.get("servers", 1)),
                capacity=None if capacity is None else int(capacity),
                truncation=int(document.get("truncation", 200)),
            )
        x0 = float(document.get("x0", 0.0))
        if x0 < 0:
            _fail(f"rbm model needs x0 >= 0, got {x0}")
        return RbmModel(x0=x0)
    except ModelFileError:
        raise
    except (ModelError, QueueModelError, TypeError, ValueError) as e:
        error_msg = f"Invalid {kind} model: {e}"
        logger.error(error_msg)
        raise ModelFileError(error_msg) from e


def model_to_document(model: Model) -> Dict[str, Any]:
    """Inverse of `parse_model`."""
    kind = model_type(model)
    document: Dict[str, Any] = {"type": kind}
    if kind == "prp":
        if model.reflection_level is not None:
            document["reflection_level"] = model.reflection_level
        defaults = {name: ZERO_RATE for name in PRP_RATE_FIELDS}
        defaults.update({name: UNIT_JUMP for name in PRP_PMF_FIELDS})
        for name in (*PRP_RATE_FIELDS, *PRP_PMF_FIELDS):
            value = getattr(model, name)
            if value == defaults[name]:
                continue
            dump = _dump_rate if name in PRP_RATE_FIELDS else _dump_pmf
            document[name] = dump(value, name)
    elif kind == "birth-death":
        document.update(birth=_dump_rate(model.birth, "birth"), death=_dump_rate(model.death, "death"),
                        lower=model.lower)
        if model.upper is not None:
            document["upper"] = model.upper
        document["truncation"] = model.truncation
    elif kind in ("mms", "mmsk"):
        document.update(lam=model.lam, mu=model.mu, servers=model.servers, truncation=model.truncation)
        if model.capacity is not None:
            document["capacity"] = model.capacity
    else:
        document["x0"] = model.x0
    return document


def loads_model(text: str) -> Model:
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        error_msg = f"Model file is not valid YAML: {e}"
        logger.error(error_msg)
        raise ModelFileError(error_msg) from e
    return parse_model(document)


def dumps_model(model: Model) -> str:
    return yaml.safe_dump(model_to_document(model), sort_keys=False, default_flow_style=None)


def load_model(path: str) -> Model:
    """
    Load a model file.

    Args:
        path: Path to the YAML model file.

    Returns:
        MarkovPrpSpec, BirthDeathSpec, MmsParams or RbmModel.

    Raises:
        FileNotFoundError: If the file does not exist.
        ModelFileError: If the file violates the schema.
    """
    logger.info(f"Loading model from {path}")
    with open(path, "r") as f:
        return loads_model(f.read())


def save_model(model: Model, path: str) -> None:
    with open(path, "w") as f:
        f.write(dumps_model(model))
