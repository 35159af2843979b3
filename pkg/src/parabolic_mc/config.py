"""Versioned TOML experiment configuration."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .coefficients import PRESETS, CoefficientField, ExpressionField, make_preset
from .errors import ConfigError, ValidationError

CONFIG_VERSION = 1
EXPERIMENTS = ("validate", "simulate", "estimate", "couple", "holder", "envelope", "oracle")
TOP_KEYS = {"version", "experiment", "seed", "workers", "chunk_size", "output", "field", "params"}
EXPRESSION_KEYS = {"d", "a", "b", "c", "lam", "b_sup", "c_sup", "a_smooth"}

# allowed parameters per experiment (name -> kind)
_NUM, _INT, _POINT, _LIST, _BOOL, _STR = "number", "integer", "point", "list", "bool", "string"
PARAMS = {
    "validate": {"lo": _NUM, "hi": _NUM, "n_grid": _INT, "times": _LIST, "theta": _NUM, "m": _NUM,
                 "radius": _NUM},
    "simulate": {"t": _NUM, "x": _POINT, "n_paths": _INT, "h": _NUM, "n_dump": _INT},
    "estimate": {"t": _NUM, "x": _POINT, "y": _LIST, "n_paths": _INT, "h": _NUM, "bandwidth": _NUM,
                 "crn": _BOOL},
    "couple": {"t": _NUM, "x": _POINT, "deltas": _LIST, "n_paths": _INT, "h": _NUM,
               "tol_factor": _NUM, "bridge_correction": _BOOL, "direction": _POINT},
    "holder": {"t": _NUM, "x": _POINT, "y": _POINT, "deltas": _LIST, "n_paths": _INT, "h": _NUM,
               "bandwidth": _NUM, "direction": _POINT},
    "envelope": {"times": _LIST, "x": _POINT, "n_r": _INT, "r_factor": _NUM, "n_paths": _INT,
                 "h": _NUM, "bandwidth": _NUM},
    "oracle": {"t": _NUM, "x": _POINT, "y": _LIST, "x_min": _NUM, "x_max": _NUM, "n_cells": _INT,
               "dt": _NUM, "form": _STR},
}
POSITIVE = {"t", "n_paths", "h", "bandwidth", "n_grid", "theta", "m", "radius", "n_r", "r_factor",
            "n_cells", "dt", "tol_factor", "n_dump"}
REQUIRED = {
    "validate": (), "simulate": ("t",), "estimate": ("t", "y"), "couple": ("t", "deltas"),
    "holder": ("t", "y", "deltas"), "envelope": ("times",), "oracle": ("t",),
}


@dataclass
class ExperimentConfig:
    version: int
    experiment: str
    seed: int
    field_spec: dict
    params: dict
    workers: int = 1
    chunk_size: int = 65536
    output: str | None = None
    raw: dict = dc_field(default_factory=dict, repr=False)

    def build_field(self) -> CoefficientField:
        return build_field(self.field_spec)

    def canonical(self) -> str:
        """Canonical JSON used for hashing (independent of key order and of ``output``)."""
        doc = {"version": self.version, "experiment": self.experiment, "seed": self.seed,
               "workers": self.workers, "chunk_size": self.chunk_size,
               "field": self.field_spec, "params": self.params}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def build_field(spec: dict) -> CoefficientField:
    spec = dict(spec)
    if "preset" in spec:
        name = spec.pop("preset")
        try:
            return make_preset(name, **spec)
        except ValidationError as exc:
            raise ConfigError(f"field: {exc}") from None
    unknown = set(spec) - EXPRESSION_KEYS
    if unknown:
        raise ConfigError(f"field: unknown keys {sorted(unknown)}")
    for key in ("d", "a"):
        if key not in spec:
            raise ConfigError(f"field.{key}: required when no preset is given")
    try:
        return ExpressionField(**spec)
    except (ValidationError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"field: {exc}") from None


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_param(name, kind, v):
    where = f"params.{name}"
    if kind == _NUM and not _is_num(v):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if kind == _INT and (not isinstance(v, int) or isinstance(v, bool)):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if kind == _BOOL and not isinstance(v, bool):
        raise ConfigError(f"{where}: expected true/false, got {v!r}")
    if kind == _STR and not isinstance(v, str):
        raise ConfigError(f"{where}: expected a string, got {v!r}")
    if kind == _POINT and not (_is_num(v) or (isinstance(v, list) and v and all(map(_is_num, v)))):
        raise ConfigError(f"{where}: expected a number or list of numbers, got {v!r}")
    if kind == _LIST:
        items = v if isinstance(v, list) else None
        if not items or not all(_is_num(i) or (isinstance(i, list) and all(map(_is_num, i)))
                                for i in items):
            raise ConfigError(f"{where}: expected a non-empty list of numbers, got {v!r}")
    if name in POSITIVE and _is_num(v) and v <= 0:
        raise ConfigError(f"{where}: must be positive, got {v!r}")
    if name in ("deltas", "times") and any(_is_num(i) and i <= 0 for i in v):
        raise ConfigError(f"{where}: entries must be positive")


def parse_config(doc: dict) -> ExperimentConfig:
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if "version" not in doc:
        raise ConfigError("version: required")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(f"version: expected {CONFIG_VERSION}, got {doc['version']!r}")
    exp = doc.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {list(EXPERIMENTS)}, got {exp!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {seed!r}")
    workers = doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"workers: expected a positive integer, got {workers!r}")
    chunk = doc.get("chunk_size", 65536)
    if not isinstance(chunk, int) or chunk < 1:
        raise ConfigError(f"chunk_size: expected a positive integer, got {chunk!r}")
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output: expected a path string")
    fspec = doc.get("field")
    if not isinstance(fspec, dict):
        raise ConfigError("field: table required (preset = ... or expressions)")
    if "preset" in fspec and fspec["preset"] not in PRESETS:
        raise ConfigError(f"field.preset: unknown preset {fspec['preset']!r}; "
                          f"choose from {sorted(PRESETS)}")
    build_field(fspec)  # fail early on a bad field table
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params: must be a table")
    allowed = PARAMS[exp]
    bad = set(params) - set(allowed)
    if bad:
        raise ConfigError(f"params: unknown keys {sorted(bad)} for experiment {exp!r}; "
                          f"allowed: {sorted(allowed)}")
    for name in REQUIRED[exp]:
        if name not in params:
            raise ConfigError(f"params.{name}: required for experiment {exp!r}")
    for name, v in params.items():
        _check_param(name, allowed[name], v)
    if params.get("form", "forward") not in ("forward", "backward"):
        raise ConfigError("params.form: expected 'forward' or 'backward'")
    return ExperimentConfig(CONFIG_VERSION, exp, seed, dict(fspec), dict(params), workers, chunk,
                            output, doc)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return parse_config(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
