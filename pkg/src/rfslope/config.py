"""Experiment configuration: JSON schema, defaults, and line-level diagnostics."""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import fields
from pathlib import Path

import jsonschema

from .montecarlo import DEFAULT_MU_LIST
from .slope_oracle import SlopeGeometry, layout_for
from .surrogates import DEFAULTS as MODEL_DEFAULTS
from .surrogates import KINDS, ModelError
from .surrogates.base import merge_hp


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_pos_list = {"type": "array", "items": _pos, "minItems": 1}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rfslope experiment",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "campaign": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu_list": _pos_list,
                "cov": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "delta_h": _pos_list,
                "delta_v": _pos_list,
                "n_per_mu": {"type": "integer", "minimum": 1},
                "seed": _seed,
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {f.name: _pos for f in fields(SlopeGeometry)},
        },
        "search": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: (_pos if k.endswith("step") else _num) for k in ("x_min", "x_max", "y_min", "y_max", "center_step", "radius_step")},
        },
        "models": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kinds": {"type": "array", "items": {"enum": list(KINDS)}, "minItems": 1, "uniqueItems": True},
                "hyperparameters": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: {"type": "object"} for k in KINDS},
                },
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["fraction", "count"]},
                "fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "count": {"type": "integer", "minimum": 1},
                "seed": _seed,
            },
        },
        "entire_data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"enabled": {"type": "boolean"}, "count": {"type": "integer", "minimum": 1}},
        },
        "cv": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 2},
                "repeats": {"type": "integer", "minimum": 1},
                "seed": _seed,
            },
        },
        "output_dir": {"type": "string", "minLength": 1},
    },
}

DEFAULT_CONFIG = {
    "campaign": {
        "mu_list": list(DEFAULT_MU_LIST),
        "cov": [0.1, 0.3, 0.5],
        "delta_h": [1.0, 6.0, 12.0, 25.0],
        "delta_v": [1.0],
        "n_per_mu": 2000,
        "seed": 0,
    },
    "geometry": {},
    "search": {},
    "models": {"kinds": list(KINDS), "hyperparameters": {}},
    "split": {"mode": "fraction", "fraction": 0.05, "count": 500, "seed": 0},
    "entire_data": {"enabled": True, "count": 500},
    "cv": {"k": 10, "repeats": 3, "seed": 0},
    "output_dir": "out",
}


# --------------------------------------------------------------------------
# source positions for diagnostics

_WS = re.compile(r"[ \t\n\r]*")


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def locate_paths(text: str) -> dict[tuple, int]:
    """Map every JSON path (tuple of keys/indices) to the line where its value starts."""
    dec = json.JSONDecoder()
    lines: dict[tuple, int] = {}

    def skip(i):
        return _WS.match(text, i).end()

    def value(i, path):
        i = skip(i)
        lines[path] = _line_of(text, i)
        ch = text[i]
        if ch == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = dec.raw_decode(text, skip(i))
                i = skip(i) + 1  # colon
                i = skip(value(i, path + (key,)))
                if text[i] == "}":
                    return i + 1
                i += 1
        if ch == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            n = 0
            while True:
                i = skip(value(i, path + (n,)))
                n += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = dec.raw_decode(text, i)
        return end

    value(0, ())
    return lines


def _where(lines: dict, path) -> str:
    path = tuple(path)
    while path and path not in lines:
        path = path[:-1]
    line = lines.get(path)
    loc = "/".join(str(p) for p in path) or "(root)"
    return f"line {line} ({loc})" if line else loc


def validate(doc: dict, text: str | None = None) -> None:
    """Raise ConfigError listing every schema violation, with line numbers when text is given."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    if not errors:
        return
    lines = locate_paths(text) if text is not None else {}
    msgs = [f"{_where(lines, e.absolute_path)}: {e.message}" for e in errors]
    raise ConfigError("invalid configuration:\n  " + "\n  ".join(msgs))


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(doc: dict, text: str | None = None, seed: int | None = None, scale: float | None = None, output_dir: str | None = None) -> dict:
    """Validate, fill defaults and apply command-line overrides.

    The result is itself a valid config; re-resolving it is the identity.
    """
    validate(doc, text)
    cfg = _deep_merge(DEFAULT_CONFIG, doc)
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg["campaign"]["seed"] = int(seed)
    if scale is not None:
        if not scale > 0:
            raise ConfigError("--scale must be positive")
        cfg["campaign"]["n_per_mu"] = max(1, int(round(cfg["campaign"]["n_per_mu"] * scale)))
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    try:
        layout_for(SlopeGeometry(**cfg["geometry"]))
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from exc
    hps = cfg["models"]["hyperparameters"]
    for kind, hp in hps.items():
        try:
            merge_hp(MODEL_DEFAULTS[kind], hp)
        except ModelError as exc:
            raise ConfigError(f"models/hyperparameters/{kind}: {exc}") from exc
    search = cfg["search"]
    if search and not {"x_min", "x_max", "y_min", "y_max"} <= set(search):
        partial = {"x_min", "x_max", "y_min", "y_max"} & set(search)
        if partial:
            raise ConfigError("search: give all of x_min, x_max, y_min, y_max or none of them")
    validate(cfg)
    return cfg


def load_config(path, **overrides) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: line 1: top level must be a JSON object")
    return resolve(doc, text, **overrides)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
