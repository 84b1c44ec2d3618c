"""Strict, versioned JSON experiment configuration."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .errors import ConfigError

SCHEMA_VERSION = 1
COMMANDS = ("lq-verify", "solve-nplayer", "solve-meanfield", "zerosum", "converge")
PRESETS = ("ex1", "ex2", "rep51", "lq-zero-sum", "custom")


class _Field:
    def __init__(self, kind, default, lo=None, hi=None, lo_open=False, choices=None, message=None):
        self.kind = kind
        self.default = default
        self.lo = lo
        self.hi = hi
        self.lo_open = lo_open
        self.choices = choices
        self.message = message

    def check(self, path, value, errors):
        kind = self.kind
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind == "int_list":
            if not isinstance(value, list) or not value or not all(
                    isinstance(v, int) and not isinstance(v, bool) for v in value):
                errors.append(f"{path}: expected a nonempty list of integers")
                return None
            if any(v < 1 for v in value):
                errors.append(f"{path}: num_players must be >= 1")
                return None
            return list(value)
        if kind is bool:
            if not isinstance(value, bool):
                errors.append(f"{path}: expected a boolean")
                return None
            return value
        if not isinstance(value, kind) or isinstance(value, bool):
            errors.append(f"{path}: expected {kind.__name__}")
            return None
        if self.choices is not None and value not in self.choices:
            errors.append(f"{path}: must be one of {', '.join(map(str, self.choices))}")
            return None
        if kind is float and not math.isfinite(value):
            errors.append(f"{path}: must be finite")
            return None
        bad_lo = self.lo is not None and (value <= self.lo if self.lo_open else value < self.lo)
        bad_hi = self.hi is not None and value > self.hi
        if bad_lo or bad_hi:
            if self.message:
                errors.append(f"{path}: {self.message}")
            else:
                rng = f"{'(' if self.lo_open else '['}{self.lo}, {self.hi if self.hi is not None else 'inf'}]"
                errors.append(f"{path}: out of range {rng}")
            return None
        return value


_GAME = {
    "preset": _Field(str, None, choices=PRESETS),
    "players": _Field(int, None, lo=1, message="num_players must be ≥ 1"),
    "sigma": _Field(float, 1.0, lo=0.0, lo_open=True),
    "gamma": _Field(float, 0.5, lo=0.0),
    "T": _Field(float, 1.0, lo=0.0, lo_open=True),
    "k": _Field(float, 1.0, lo=0.0, lo_open=True),
    "kappa1": _Field(float, 0.5),
    "kappa2": _Field(float, 0.5),
    "abar": _Field(float, 10.0, lo=0.0, lo_open=True),
    "x0": _Field(float, 0.0),
    "grid_points": _Field(int, 401, lo=2),
    "weight": _Field(float, 2.0),
    "kappa": _Field(float, 0.5),
    "coefficients": _Field(dict, None),
}

_NUMERICS = {
    "steps": _Field(int, 50, lo=1),
    "paths": _Field(int, 1 << 14, lo=64),
    "particles": _Field(int, 1 << 14, lo=1000),
    "reference_particles": _Field(int, 1 << 16, lo=1000),
    "basis_degree": _Field(int, 2, lo=0, hi=3),
    "ridge": _Field(float, 0.0, lo=0.0),
    "picard_damping": _Field(float, 0.5, lo=0.0, lo_open=True, hi=1.0),
    "picard_tol": _Field(float, 1e-3, lo=0.0, lo_open=True),
    "picard_max_iters": _Field(int, 30, lo=1),
    "fixed_point_paths": _Field(int, 4096, lo=16),
    "outer_max_iters": _Field(int, 10, lo=1),
    "outer_tol_scale": _Field(float, 5e-3, lo=0.0, lo_open=True),
    "outer_damping": _Field(float, 1.0, lo=0.0, lo_open=True, hi=1.0),
    "quadrature_panels": _Field(int, 512, lo=10),
    "workers": _Field(int, 1, lo=1),
}

_SWEEP = {
    "N": _Field("int_list", [2, 4, 8, 16, 32, 64]),
    "mode": _Field(str, "closed_form", choices=("closed_form", "numerical")),
    "gamma_statistic": _Field(bool, True),
    "gamma_reps": _Field(int, 32, lo=1),
    "pbar": _Field(float, 1.0, lo=0.0, lo_open=True),
    "eta_constant": _Field(float, 1.0, lo=0.0),
    "timings": _Field(bool, False),
}

_TOP = {"schema_version", "command", "game", "numerics", "sweep", "seed", "output"}

# custom polynomial coefficient table; every entry defaults to zero
CUSTOM_DRIFT = ("const", "control", "state", "mean_state", "mean_control")
CUSTOM_RUNNING = ("const", "control", "control_sq", "state", "state_sq", "mean_state", "mean_control",
                  "others_control_sq")
CUSTOM_TERMINAL = ("state", "state_sq")
CUSTOM_AGGREGATOR = ("mm", "mn", "nn", "m", "n")
CUSTOM_BLOCKS = {"drift": CUSTOM_DRIFT, "running": CUSTOM_RUNNING, "terminal": CUSTOM_TERMINAL,
                 "aggregator": CUSTOM_AGGREGATOR}
_CUSTOM_SCALARS = {"phi1_cap": _Field(float, 10.0, lo=0.0, lo_open=True),
                   "phi2_mean": _Field(float, 0.0), "phi2_cap": _Field(float, 1.0, lo=0.0, lo_open=True)}


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    command: Optional[str] = None
    game: Dict[str, Any] = field(default_factory=dict)
    numerics: Dict[str, Any] = field(default_factory=dict)
    sweep: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    output: str = "out"

    def to_dict(self) -> dict:
        d = {"schema_version": self.schema_version, "game": self.game, "numerics": self.numerics,
             "sweep": self.sweep, "seed": self.seed, "output": self.output}
        if self.command is not None:
            d["command"] = self.command
        return copy.deepcopy(d)


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"{k}: duplicate key")
        out[k] = v
    return out


def _reject_constant(name):
    raise ConfigError(f"non-standard JSON constant {name}")


def _block(path, raw, schema, errors, required=()):
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected an object")
        return {}
    out = {}
    for key in raw:
        if key not in schema:
            errors.append(f"{path}.{key}: unknown key")
    for key in required:
        if key not in raw:
            errors.append(f"{path}.{key}: missing required field")
    for key, spec in schema.items():
        if key in raw:
            val = spec.check(f"{path}.{key}", raw[key], errors)
            if val is not None:
                out[key] = val
        elif spec.default is not None:
            out[key] = copy.deepcopy(spec.default)
    return out


def _custom(path, raw, errors):
    allowed = set(CUSTOM_BLOCKS) | set(_CUSTOM_SCALARS)
    out = {}
    for key in raw:
        if key not in allowed:
            errors.append(f"{path}.{key}: unknown key")
    for name, keys in CUSTOM_BLOCKS.items():
        schema = {k: _Field(float, 0.0) for k in keys}
        out[name] = _block(f"{path}.{name}", raw.get(name, {}), schema, errors)
    out.update(_block(path, {k: v for k, v in raw.items() if k in _CUSTOM_SCALARS}, _CUSTOM_SCALARS, errors))
    return out


def _validate(data, errors) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    for key in data:
        if key not in _TOP:
            errors.append(f"{key}: unknown key")
    if "schema_version" not in data:
        errors.append("schema_version: missing required field")
    elif data["schema_version"] != SCHEMA_VERSION or isinstance(data["schema_version"], bool):
        errors.append(f"schema_version: must be {SCHEMA_VERSION}")
    command = data.get("command")
    if command is not None and command not in COMMANDS:
        errors.append(f"command: must be one of {', '.join(COMMANDS)}")
    if "game" not in data:
        errors.append("game: missing required field")
    game = _block("game", data.get("game", {}), _GAME, errors, required=("preset",))
    preset = game.get("preset")
    if preset == "custom":
        if "coefficients" not in game:
            errors.append("game.coefficients: required for the custom preset")
        else:
            game["coefficients"] = _custom("game.coefficients", game["coefficients"], errors)
    elif "coefficients" in game:
        errors.append("game.coefficients: only allowed with the custom preset")
    if preset in ("ex1", "ex2"):
        if game.get("players", 2) != 2:
            errors.append(f"game.players: preset {preset} has exactly 2 players")
        game["players"] = 2
    elif preset == "rep51":
        game.setdefault("players", 2)
    elif preset == "custom":
        game.setdefault("players", 2)
    numerics = _block("numerics", data.get("numerics", {}), _NUMERICS, errors)
    sweep = _block("sweep", data.get("sweep", {}), _SWEEP, errors)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        errors.append("seed: must be an integer in [0, 2^64)")
        seed = 0
    output = data.get("output", "out")
    if not isinstance(output, str) or not output:
        errors.append("output: expected a nonempty string")
        output = "out"
    return ExperimentConfig(SCHEMA_VERSION, command, game, numerics, sweep, seed, output)


def parse_config(text) -> ExperimentConfig:
    """Parse and validate config text; raises :class:`ConfigError` listing every problem with its key path."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config is not valid UTF-8: {exc}") from None
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    errors: List[str] = []
    cfg = _validate(data, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(raw)
