"""Experiment configuration: JSON schema, validation and object builders."""

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .exceptions import DomainError
from .fields import DriftFields, EMPotential, Field, PhysicalConstants, ProcessSpec, free_particle_spec
from .gauge import gauge_from_config
from .geometry import boost

EXPERIMENTS = {
    "identities": "Diffusion-tensor identities on random timelike drifts",
    "simulate": "Simulate an ensemble of sample paths and write it as CSV",
    "estimate": "Estimate drift and diffusion from simulated increments",
    "free-particle": "Closed-form density: point values, Kolmogorov residuals, normalization",
    "ck-check": "Chapman-Kolmogorov convolution check of the closed-form density",
    "ratio-table": "Spacelike/timelike density ratio table and the rest-rate constant",
    "nr-limit": "Scan of the non-relativistic limit over increasing c",
    "spectral": "Periodic-grid eigen-expansion of the Kolmogorov operators",
    "nelson-check": "Nelson and gradient-condition residuals of the rest solution",
    "ibp-check": "Monte Carlo check of the stochastic integration-by-parts formula",
}

STOCHASTIC = {"simulate", "estimate", "ibp-check"}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_vec4 = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": sorted(EXPERIMENTS)},
        "natural_units": {"type": "boolean"},
        "constants": {
            "oneOf": [
                {"enum": ["natural", "electron"]},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"m": _pos, "c": _pos, "h": _pos, "q": _num},
                },
            ]
        },
        "field": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"enum": ["free-particle"]},
                "beta": _vec3,
                "grid_csv": {"type": "string"},
            },
        },
        "gauge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["identity", "affine"]}, "a": _pos, "b": _num},
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "step": _pos,
                "n_steps": {"type": "integer", "minimum": 1},
                "n_paths": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "direction": {"enum": ["forward", "backward"]},
                "record_every": {"type": "integer", "minimum": 1},
                "x0": _vec4,
                "s0": _num,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lengths": {"type": "array", "items": _pos, "minItems": 1, "maxItems": 2},
                "n_points": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 1,
                             "maxItems": 2},
                "w": {"oneOf": [_pos, {"type": "array"}]},
                "v": {"oneOf": [_num, {"type": "array"}]},
                "fd_step": _pos,
            },
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 1},
                "dg": _pos,
                "tau": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "c_values": {"type": "array", "items": _pos, "minItems": 2},
                "velocity": _vec3,
                "splits": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3,
                                                       "maxItems": 3}},
                "interval": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "cases": {"type": "array", "items": {"enum": ["one", "x0", "x1"]}},
                "n_modes": {"type": "integer", "minimum": 1},
            },
        },
        "output": {"type": "string"},
        "tolerances": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
    },
    "allOf": [
        {
            "if": {"properties": {"experiment": {"enum": sorted(STOCHASTIC)}}},
            "then": {"required": ["simulation"], "properties": {"simulation": {"required": ["seed"]}}},
        }
    ],
}


class ConfigError(ValueError):
    """Configuration failed schema validation; ``errors`` lists the messages."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = errors


def validate_config(cfg):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError([f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors])
    return cfg


def load_config(path, seed=None, natural_units=False):
    """Read, apply command-line overrides, and validate a JSON config."""
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from exc
    if not isinstance(cfg, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg.setdefault("simulation", {})["seed"] = int(seed)
    if natural_units:
        cfg["natural_units"] = True
    return validate_config(cfg)


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def build_constants(cfg):
    if cfg.get("natural_units"):
        return PhysicalConstants.natural()
    c = cfg.get("constants", "natural")
    if c == "natural":
        return PhysicalConstants.natural()
    if c == "electron":
        return PhysicalConstants.electron()
    return PhysicalConstants(**c)


def build_gauge(cfg):
    return gauge_from_config(cfg.get("gauge"))


def build_spec(cfg, constants):
    f = cfg.get("field", {})
    if "grid_csv" in f:
        drift, potential = load_grid_field(f["grid_csv"])
        return ProcessSpec(constants, drift, potential or EMPotential.zero())
    beta = f.get("beta", [0.0, 0.0, 0.0])
    return free_particle_spec(constants, boost(beta) if any(beta) else None)


def load_grid_field(path):
    """Drift (and optional potential) fields sampled on a rectilinear grid.

    The CSV header is ``x0,x1,x2,x3,u0..u3,v0..v3`` with optional ``A0..A3``.
    Coordinates that take a single value are dropped from the interpolation,
    so 1D to 4D samplings are accepted. Between samples the fields are
    multilinear, so their second derivatives are only piecewise meaningful.
    """
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    need = [f"x{i}" for i in range(4)] + [f"u{i}" for i in range(4)] + [f"v{i}" for i in range(4)]
    missing = [n for n in need if n not in names]
    if missing:
        raise ValueError(f"grid field CSV lacks columns {missing}")
    X = np.stack([data[f"x{i}"] for i in range(4)], axis=-1)
    axes = [i for i in range(4) if len(np.unique(X[:, i])) > 1]
    if not axes:
        raise ValueError("grid field needs at least two distinct sample points")
    coords = [np.unique(X[:, i]) for i in axes]
    shape = tuple(len(c) for c in coords)
    if np.prod(shape) != len(X):
        raise ValueError("grid field samples do not form a complete rectilinear grid")
    order = np.lexsort([X[:, i] for i in reversed(axes)])

    def interpolant(prefix):
        vals = np.stack([data[f"{prefix}{i}"] for i in range(4)], axis=-1)[order].reshape(shape + (4,))
        interp = RegularGridInterpolator(coords, vals, method="linear", bounds_error=True)

        def fn(x):
            x = np.asarray(x, dtype=float)
            try:
                return interp(x[..., axes]).reshape(x.shape[:-1] + (4,))
            except ValueError as exc:
                raise DomainError(f"point outside the sampled grid: {exc}") from exc

        return Field(fn)

    drift = DriftFields(interpolant("u"), interpolant("v"))
    potential = EMPotential(interpolant("A")) if "A0" in names else None
    return drift, potential
