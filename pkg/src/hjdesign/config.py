"""Run configuration: YAML text validated against a JSON schema.

Validation errors carry the line of the offending YAML node and the dotted
path of the field, e.g. ``run.yaml:3: grid.M: 2 is less than the minimum of 3``.
Every default is filled in explicitly so the resolved echo fully
determines a run.
"""

from __future__ import annotations

import copy
from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigurationError

SUBCOMMANDS = ("solve", "backward", "envelope", "gateaux", "transport", "grad", "invert", "project", "check",
               "cone", "selftest")

_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_data = {
    "type": "object",
    "properties": {
        "fixture": {"type": "string"},
        "csv": {"type": "string"},
        "random": {
            "type": "object",
            "properties": {"n_terms": {"type": "integer", "minimum": 1}, "lip": _pos},
            "additionalProperties": False,
        },
        "indicator": {"type": "object", "properties": {"halfwidth": _pos}, "required": ["halfwidth"],
                      "additionalProperties": False},
    },
    "minProperties": 1,
    "maxProperties": 1,
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["grid", "hamiltonian", "T"],
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "required": ["dim", "M"],
            "additionalProperties": False,
            "properties": {
                "dim": {"enum": [1, 2]},
                "L": _pos,
                "M": {"type": "integer", "minimum": 3},
                "extension": {"enum": ["constant", "linear"]},
            },
        },
        "hamiltonian": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["quadratic", "shifted"]},
                "A": {"type": "array", "items": _number, "minItems": 1},
                "potential": {"oneOf": [{"type": "string"}, {"type": "object", "required": ["kind"]}]},
                "C0": {"type": ["number", "null"]},
            },
        },
        "T": _pos,
        "scheme": {"enum": [None, "hopf_lax", "semi_lagrangian", "lax_friedrichs"]},
        "schedule": {"type": ["array", "null"], "items": _pos},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"u0": _data, "uT": _data, "w": _data, "piT": _data},
        },
        "gateaux": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "deltas": {"type": "array", "items": _pos, "minItems": 2},
                "n_steps": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "transport": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau": _pos,
                "schedule": {"type": ["array", "null"], "items": _pos},
                "r_atom": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "grad": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_directions": {"type": "integer", "minimum": 1}, "delta": _pos},
        },
        "descent": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iter": {"type": "integer", "minimum": 0},
                "gamma0": _pos,
                "armijo": _pos,
                "gamma_floor": _pos,
                "eta": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "tol": {"type": "number", "minimum": 0},
                "abs_tol": {"type": ["number", "null"], "minimum": 0},
                "grad_tol": {"type": "number", "minimum": 0},
                "init": {"enum": ["backward", "zero", "clipped"]},
                "snapshot_every": {"type": "integer", "minimum": 0},
            },
        },
        "projection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol_qp": _pos,
                "change_tol": _pos,
                "max_sweeps": {"type": "integer", "minimum": 1},
                "omega": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                "method": {"enum": ["auto", "dykstra"]},
                "tol_reach": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "selftest": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M1": {"type": "integer", "minimum": 33},
                "M2": {"type": "integer", "minimum": 17},
                "n_pairs": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "grid": {"L": 2.0, "extension": "linear"},
    "hamiltonian": {},
    "scheme": None,
    "schedule": None,
    "seed": 0,
    "output_dir": "out",
    "data": {
        "u0": {"fixture": "abs-kink"},
        "uT": {"fixture": "two-bump"},
        "w": {"fixture": "gaussian-bump"},
        "piT": {"indicator": {"halfwidth": 1.5}},
    },
    "gateaux": {"deltas": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], "n_steps": None},
    "transport": {"tau": 0.5, "schedule": None, "r_atom": None},
    "grad": {"n_directions": 5, "delta": 1e-3},
    "descent": {"max_iter": 20, "gamma0": 0.5, "armijo": 1e-4, "gamma_floor": 1e-6, "eta": None, "tol": 1e-4,
                "abs_tol": None, "grad_tol": 0.0, "init": "backward", "snapshot_every": 5},
    "projection": {"tol_qp": 1e-8, "change_tol": 1e-10, "max_sweeps": 5000, "omega": 1.0, "method": "auto",
                   "tol_reach": None},
    "selftest": {"M1": 257, "M2": 33, "n_pairs": 20},
}

DEFAULT_CONFIG = {
    "grid": {"dim": 1, "M": 257},
    "hamiltonian": {"family": "quadratic", "A": [2.0]},
    "T": 0.5,
}


class _Source:
    """YAML node tree kept alongside the parsed data to map paths to lines."""

    def __init__(self, text: str, name: str):
        self.name = name
        try:
            self.root = yaml.compose(text)
        except yaml.YAMLError:
            self.root = None

    def line(self, path) -> int:
        node = self.root
        line = node.start_mark.line + 1 if node is not None else 1
        for key in path:
            if isinstance(node, yaml.MappingNode):
                nxt = next((v for k, v in node.value if k.value == key), None)
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                nxt = node.value[key]
            else:
                nxt = None
            if nxt is None:
                break
            node = nxt
            line = node.start_mark.line + 1
        return line


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "data":
            out[k] = _merge(out[k], v)
        elif k == "data" and isinstance(v, dict):
            out[k] = {**out[k], **copy.deepcopy(v)}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _dotted(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def validate(cfg, source: _Source | None = None) -> None:
    """Raise :class:`ConfigurationError` naming the first offending field."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(e.path), e.message))
    if not errors:
        return
    err = errors[0]
    path = list(err.path)
    field = _dotted(path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        field = _dotted(path + [missing])
    where = f"{source.name}:{source.line(path)}: " if source is not None else ""
    raise ConfigurationError(f"{where}{field}: {err.message}")


def resolve(cfg: dict, source: _Source | None = None) -> dict:
    """Validate and fill in every default; the result is JSON serializable."""
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"{source.name if source else 'config'}:1: <root>: expected a mapping")
    validate(cfg, source)
    out = _merge(DEFAULTS, cfg)
    ham = out["hamiltonian"]
    ham["dim"] = out["grid"]["dim"]
    if ham["family"] == "quadratic":
        dim = out["grid"]["dim"]
        ham.setdefault("A", [1.0] if dim == 1 else [1.0, 0.0, 0.0, 1.0])
        if len(ham["A"]) != dim * dim:
            where = f"{source.name}:{source.line(['hamiltonian', 'A'])}: " if source else ""
            raise ConfigurationError(f"{where}hamiltonian.A: need {dim * dim} entries for a {dim}D grid")
    else:
        ham.setdefault("potential", "zero")
        ham.setdefault("C0", None)
    return out


def load(path) -> dict:
    """Read, validate and resolve a YAML run config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, path.name)


def loads(text: str, name: str = "<config>") -> dict:
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigurationError(f"{name}:{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    return resolve(cfg if cfg is not None else {}, _Source(text, name))
