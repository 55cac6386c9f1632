"""JSON configuration: schema, presets and conversion to library objects.

Precedence when the CLI resolves a run: preset or ``--config`` file, then
``--param`` preset parameters, then the ``--seed``, ``--workers`` and
``--out`` flags. ``FASTDIFF_WORKERS`` applies when ``--workers`` is absent.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema
import numpy as np

from .basis import Truncation
from .noise import BoundaryNoiseSpec, ConfigurationError, EdgeNoise, Regime
from .polynomial import ReactionPolynomial
from .solver import SystemSpec

_num = {"type": "number"}
_edge = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "alpha0": {"type": "number", "minimum": 0},
        "law": {"enum": ["power", "list"]},
        "c": {"type": "number", "minimum": 0},
        "mu": _num,
        "values": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "noise", "numerics", "experiment"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "d", "reactions", "regime"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "d": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "reactions": {
                    "type": "array",
                    "items": {"type": "array", "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["powers", "coeff"],
                        "properties": {
                            "powers": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            "coeff": _num,
                        },
                    }},
                },
                "regime": {"enum": ["case1", "case2"]},
                "positivity": {"type": "boolean"},
            },
        },
        "noise": {"type": "array", "items": {"type": "array", "minItems": 4, "maxItems": 4,
                                             "items": _edge}},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mean": {"type": "array", "items": _num},
                "modes": {"type": "array", "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["species", "k", "value"],
                    "properties": {
                        "species": {"type": "integer", "minimum": 0},
                        "k": {"type": "array", "items": {"type": "integer", "minimum": 0},
                              "minItems": 2, "maxItems": 2},
                        "value": _num,
                    },
                }},
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "required": ["K", "h", "T0"],
            "properties": {
                "K": {"type": "integer", "minimum": 0},
                "grid_n": {"type": "integer", "minimum": 1},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "T0": {"type": "number", "minimum": 0},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "p": {"type": "number", "minimum": 1},
                "save_every": {"type": "integer", "minimum": 1},
                "batch": {"type": "integer", "minimum": 1},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "required": ["epsilons", "paths", "seed"],
            "properties": {
                "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                         "exclusiveMaximum": 1}},
                "paths": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "workers": {"type": "integer", "minimum": 1},
                "threshold_kappa": {"type": "number", "exclusiveMinimum": 0},
                "self_convergence": {"type": "boolean"},
                "noise_off": {"type": "boolean"},
                "averaging": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "epsilons": {"type": "array", "items": {"type": "number",
                                                                 "exclusiveMinimum": 0}},
                        "q": {"type": "array", "items": {"type": "array", "items": _num}},
                        "d": {"type": "number", "exclusiveMinimum": 0},
                        "modes": {"type": "array", "items": {"type": "array",
                                                             "items": {"type": "integer"}}},
                        "T": {"type": "number", "exclusiveMinimum": 0},
                        "paths": {"type": "integer", "minimum": 1},
                        "steps_per_relaxation": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "npz"]}},
                "probes": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                                      "minItems": 3, "maxItems": 3}},
            },
        },
    },
}

NUMERICS_DEFAULTS = {"kappa": 0.1, "p": 2, "save_every": 100, "batch": 8}
EXPERIMENT_DEFAULTS = {"threshold_kappa": 0.02, "self_convergence": True, "noise_off": False}
AVERAGING_DEFAULTS = {"epsilons": [0.2, 0.1, 0.05, 0.025], "q": [[2.0]], "d": 1.0,
                      "modes": [[1, 0]], "T": 1.0, "paths": 10000, "steps_per_relaxation": 5}
OUTPUT_DEFAULTS = {"directory": "out", "formats": ["csv"], "probes": [[0, 1, 0], [0, 1, 1]]}


class ValidationError(ConfigurationError):
    """Schema or consistency failure, carrying a JSON pointer."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate(cfg: dict) -> dict:
    """Validate and return a fully resolved copy with defaults filled in."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(_pointer(exc.absolute_path), exc.message) from None
    cfg = copy.deepcopy(cfg)
    sys_ = cfg["system"]
    n = sys_["n"]
    for key in ("d", "reactions"):
        if len(sys_[key]) != n:
            raise ValidationError(f"/system/{key}", f"expected {n} entries")
    for i, terms in enumerate(sys_["reactions"]):
        for j, t in enumerate(terms):
            if len(t["powers"]) != n:
                raise ValidationError(f"/system/reactions/{i}/{j}/powers", f"expected {n} powers")
    sys_.setdefault("positivity", False)
    if len(cfg["noise"]) != n:
        raise ValidationError("/noise", f"expected {n} species")
    for i, per in enumerate(cfg["noise"]):
        for e, rec in enumerate(per):
            for k, v in EdgeNoise().to_dict().items():
                rec.setdefault(k, v)
    init = cfg.setdefault("initial", {})
    init.setdefault("mean", [0.0] * n)
    init.setdefault("modes", [])
    if len(init["mean"]) != n:
        raise ValidationError("/initial/mean", f"expected {n} entries")
    num = cfg["numerics"]
    for k, v in NUMERICS_DEFAULTS.items():
        num.setdefault(k, v)
    num.setdefault("grid_n", 2 * num["K"] + 1)
    for j, mode in enumerate(init["modes"]):
        if mode["species"] >= n:
            raise ValidationError(f"/initial/modes/{j}/species", "species out of range")
        if max(mode["k"]) > num["K"]:
            raise ValidationError(f"/initial/modes/{j}/k", "mode outside truncation")
    if num["grid_n"] < 2 * num["K"] + 1:
        raise ValidationError("/numerics/grid_n", "must be >= 2K+1")
    exp = cfg["experiment"]
    for k, v in EXPERIMENT_DEFAULTS.items():
        exp.setdefault(k, v)
    eps = exp["epsilons"]
    if not eps:
        raise ValidationError("/experiment/epsilons", "need at least one epsilon")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ValidationError("/experiment/epsilons", "must be strictly decreasing")
    avg = exp.setdefault("averaging", {})
    for k, v in AVERAGING_DEFAULTS.items():
        avg.setdefault(k, copy.deepcopy(v))
    out = cfg.setdefault("output", {})
    for k, v in OUTPUT_DEFAULTS.items():
        out.setdefault(k, copy.deepcopy(v))
    try:
        noise_spec(cfg)
        for e in eps:
            system_spec(cfg, e)
    except ConfigurationError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError("/noise" if "noise" in str(exc) or "species" in str(exc)
                              else "/system", str(exc)) from None
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def reactions(cfg: dict) -> tuple[ReactionPolynomial, ...]:
    n = cfg["system"]["n"]
    return tuple(ReactionPolynomial.from_terms(n, terms) for terms in cfg["system"]["reactions"])


def noise_spec(cfg: dict) -> BoundaryNoiseSpec:
    F = reactions(cfg)
    m = max(f.degree for f in F)
    edges = tuple(tuple(EdgeNoise.from_dict(r) for r in per) for per in cfg["noise"])
    return BoundaryNoiseSpec(edges, regime=cfg["system"]["regime"], m=max(m, 1))


def system_spec(cfg: dict, eps: float) -> SystemSpec:
    return SystemSpec(tuple(cfg["system"]["d"]), reactions(cfg), eps,
                      Regime.parse(cfg["system"]["regime"]), cfg["numerics"]["kappa"])


def truncation(cfg: dict) -> Truncation:
    return Truncation(cfg["numerics"]["K"], cfg["numerics"]["grid_n"])


def initial_coefficients(cfg: dict) -> np.ndarray:
    n = cfg["system"]["n"]
    K = cfg["numerics"]["K"]
    u0 = np.zeros((n, K + 1, K + 1))
    u0[:, 0, 0] = cfg["initial"]["mean"]
    for mode in cfg["initial"]["modes"]:
        u0[mode["species"], mode["k"][0], mode["k"][1]] += mode["value"]
    return u0


# presets -------------------------------------------------------------------

def _edges(n_species, c, mu, alpha0):
    rec = {"alpha0": alpha0, "law": "power", "c": c, "mu": mu, "values": []}
    return [[dict(rec) for _ in range(4)] for _ in range(n_species)]


def _heat(regime, c=0.15, mu=2.0, alpha0=0.1, b0=0.5, psi=0.1, d=1.0):
    case1 = regime == "case1"
    return {
        "system": {"n": 1, "d": [d], "regime": regime, "positivity": False,
                   "reactions": [[{"powers": [1], "coeff": 1.0}, {"powers": [3], "coeff": -1.0}]]},
        "noise": _edges(1, c, mu, 0.0 if case1 else alpha0),
        "initial": {"mean": [b0],
                    "modes": [{"species": 0, "k": [1, 0], "value": psi}] if case1 and psi else []},
        "numerics": {"K": 16, "h": 1e-4, "T0": 1.0, "kappa": 0.1, "p": 2, "save_every": 100},
        "experiment": {"epsilons": [0.2, 0.1, 0.05], "paths": 32, "seed": 20240611},
    }


def _autocat(regime, rho=1.0, d=1.0, c=0.15, mu=2.0, alpha0=0.05, b1=0.6, b2=0.4, psi=0.0):
    case1 = regime == "case1"
    return {
        "system": {"n": 2, "d": [1.0, d], "regime": regime, "positivity": True,
                   "reactions": [[{"powers": [1, 2], "coeff": -rho}],
                                 [{"powers": [1, 2], "coeff": rho}]]},
        "noise": _edges(2, c, mu, 0.0 if case1 else alpha0),
        "initial": {"mean": [b1, b2],
                    "modes": [{"species": 1, "k": [1, 0], "value": psi}] if case1 and psi else []},
        "numerics": {"K": 16, "h": 1e-4, "T0": 1.0, "kappa": 0.1, "p": 2, "save_every": 100},
        "experiment": {"epsilons": [0.2, 0.1, 0.05], "paths": 32, "seed": 20240611},
    }


PRESETS = {
    "heat-case1": lambda **kw: _heat("case1", **kw),
    "heat-case2": lambda **kw: _heat("case2", **kw),
    "autocat-case1": lambda **kw: _autocat("case1", **kw),
    "autocat-case2": lambda **kw: _autocat("case2", **kw),
}


def preset(name: str, **params) -> dict:
    """Raw config of a built-in preset; ``params`` expose the family parameters."""
    try:
        builder = PRESETS[name]
    except KeyError:
        raise ValidationError("", f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ValidationError("", f"bad preset parameter: {exc}") from None


@dataclass
class ResolvedRun:
    cfg: dict

    @property
    def hash(self) -> str:
        return config_hash(self.cfg)
