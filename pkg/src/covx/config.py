"""Pipeline configuration: JSON schema, defaults and content hash."""

from __future__ import annotations

import copy
import hashlib
import json
import os

from jsonschema import Draft202012Validator

from .exceptions import ConfigError

_interval = {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
             "minItems": 2, "maxItems": 2}
_posint = {"type": "integer", "minimum": 1}
_grid = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["variates", "covariates", "stage1", "stage2"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "variates": {"type": "array", "items": {"type": "string"}, "minItems": 1, "uniqueItems": True},
        "covariates": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "additionalProperties": False,
                "properties": {"name": {"type": "string"}, "periodic": {"type": "boolean"}},
            },
        },
        "stage1": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "timeseries": {"type": "string"},
                "peaks": {"type": "string"},
                "simulate": {
                    "type": "object",
                    "required": ["truth", "n"],
                    "additionalProperties": False,
                    "properties": {"truth": {"type": ["string", "object"]}, "n": _posint},
                },
                "level_quantile": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "merge_gap": {"type": "number", "exclusiveMinimum": 0},
                "period_years": {"type": "number", "exclusiveMinimum": 0},
            },
            "oneOf": [{"required": ["timeseries"]}, {"required": ["peaks"]}, {"required": ["simulate"]}],
        },
        "stage2": {
            "type": "object",
            "required": ["edges"],
            "additionalProperties": False,
            "properties": {
                "edges": {"type": "array", "minItems": 1,
                          "items": {"type": "array", "items": {"type": "number"}, "minItems": 1}},
            },
        },
        "stage3": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_intervals": {"type": "array", "items": _interval, "minItems": 1},
                "n_resamples": _posint,
                "lambda_grid": _grid,
                "roughness": {"type": ["number", "array", "null"]},
                "n_folds": {"type": "integer", "minimum": 2},
                "reselect_lambda": {"type": "boolean"},
                "location_quantile": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "method": {"enum": ["nelder_mead", "newton_raphson"]},
                "cv_method": {"enum": ["nelder_mead", "newton_raphson"]},
                "return_periods": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                   "minItems": 1},
            },
        },
        "stage4": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "conditioning": {"type": "string"},
                "tau_dep_interval": _interval,
                "lambda_grid": _grid,
                "roughness": {"type": ["number", "array", "null"]},
                "delta": {"oneOf": [{"enum": [1, 2]}, {"type": "array", "items": {"enum": [1, 2]}}]},
                "method": {"enum": ["nelder_mead", "newton_raphson"]},
                "margin": {"enum": ["laplace", "gumbel"]},
                "pool_residuals": {"type": "boolean"},
                "return_period": {"type": "number", "exclusiveMinimum": 0},
                "n_conditional": _posint,
            },
        },
        "stage5": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "return_period": {"type": "number", "exclusiveMinimum": 0},
                "n_simulate": {"type": "integer", "minimum": 1000},
                "n_lock": _posint,
                "n_angles": {"type": "integer", "minimum": 8},
                "grid": {"type": "integer", "minimum": 20},
                "subsets": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"oneOf": [{"enum": ["omni", "each"]},
                                        {"type": "array", "items": {"type": "integer", "minimum": 0},
                                         "minItems": 1}]},
                },
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "stage1": {"level_quantile": 0.5, "merge_gap": 24.0},
    "stage3": {
        "tau_intervals": [[0.7, 0.9]],
        "n_resamples": 100,
        "lambda_grid": None,
        "roughness": None,
        "n_folds": 10,
        "reselect_lambda": False,
        "location_quantile": 0.0,
        "method": "nelder_mead",
        "cv_method": "newton_raphson",
        "return_periods": [100.0],
    },
    "stage4": {
        "conditioning": None,
        "tau_dep_interval": [0.6, 0.8],
        "lambda_grid": None,
        "roughness": None,
        "delta": 2,
        "method": "newton_raphson",
        "margin": "laplace",
        "pool_residuals": False,
        "return_period": 100.0,
        "n_conditional": 2000,
    },
    "stage5": {
        "return_period": 100.0,
        "n_simulate": 100000,
        "n_lock": 10000,
        "n_angles": 360,
        "grid": 200,
        "subsets": ["omni", "each"],
    },
}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate(raw: dict) -> None:
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, _pointer(e.absolute_path))


def with_defaults(raw: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(copy.deepcopy(value))
        else:
            cfg[key] = copy.deepcopy(value)
    for c in cfg["covariates"]:
        c.setdefault("periodic", False)
    D = len(cfg["variates"])
    ivs = cfg["stage3"]["tau_intervals"]
    if len(ivs) == 1:
        cfg["stage3"]["tau_intervals"] = [list(ivs[0]) for _ in range(D)]
    elif len(ivs) != D:
        raise ConfigError("need one interval or one per variate", "/stage3/tau_intervals")
    for k, (lo, hi) in enumerate(cfg["stage3"]["tau_intervals"]):
        if lo > hi:
            raise ConfigError("interval lower end exceeds upper end", f"/stage3/tau_intervals/{k}")
    lo, hi = cfg["stage4"]["tau_dep_interval"]
    if lo > hi:
        raise ConfigError("interval lower end exceeds upper end", "/stage4/tau_dep_interval")
    if len(cfg["stage2"]["edges"]) != len(cfg["covariates"]):
        raise ConfigError("one edge list per covariate is required", "/stage2/edges")
    cond = cfg["stage4"]["conditioning"]
    if cond is not None and cond not in cfg["variates"]:
        raise ConfigError(f"unknown variate {cond!r}", "/stage4/conditioning")
    return cfg


def canonical_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_config(path) -> tuple[dict, str, str]:
    """Validated configuration with defaults, its hash and its directory."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "/")
    validate(raw)
    return with_defaults(raw), canonical_hash(raw), os.path.dirname(os.path.abspath(path))
