"""Experiment configuration: nested YAML documents validated against a fixed schema.

Every key has a default; unknown keys and wrongly typed values raise ConfigError
naming the full key path (e.g. ``pgp.step_size``).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

ALGORITHMS = ("pgp", "pdpg", "unconstrained", "ipppm")
CONSTRAINT_KINDS = ("none", "linear", "kl_ref", "norm_ref")

DEFAULTS: dict = {
    "algorithm": "pgp",
    "seed": 0,
    "output": "runs",
    "workers": 1,
    "environment": {
        "kind": "frozenlake",
        "map": None,
        "slip_prob": 0.0,
        "cost_profile": "hole_penalty",
        "discount": 0.99,
    },
    "constraint": {
        "kind": "linear",
        "r_max": 0.1,
        "b": 0.0,
        "reference_epsilon": 1e-3,
    },
    "pgp": {
        "iterations": 2000,
        "step_size": 0.01,
        "batch": 8,
        "horizon": 100,
        "beta": 0.005,
        "penalty": "quadratic",
        "eval_every": 10,
        "floor": 1e-6,
        "box_radius": 10.0,
        "split_ratio": 0.5,
    },
    "pdpg": {
        "primal_lr": 0.01,
        "dual_lr": 0.001,
        "momentum": 1.0,
    },
    "ipppm": {
        "u0": [0.6, 0.6],
        "a": [1.0, 1.0],
        "b": 0.6,
        "weights": None,
        "box": 1.5,
        "theta0": [-1.2, 1.4],
        "epsilon": 0.01,
        "penalty": "quadratic",
        "beta": None,
        "inner": "gd",
        "outer": 20000,
        "eps_in": None,
        "inner_cap": 20000,
        "stop_gap": None,
    },
    "sweep": {
        "beta": None,
        "batch": None,
        "step_size": None,
        "b": None,
        "seeds": None,
    },
}

_NULLABLE = {
    ("environment", "map"), ("ipppm", "weights"), ("ipppm", "beta"), ("ipppm", "eps_in"),
    ("ipppm", "stop_gap"), ("sweep", "beta"), ("sweep", "batch"), ("sweep", "step_size"),
    ("sweep", "b"), ("sweep", "seeds"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A resolved configuration; ``data`` mirrors DEFAULTS with user values merged in."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def algorithm(self) -> str:
        return self.data["algorithm"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def sweep_axis(self, name: str, fallback):
        values = self.data["sweep"][name]
        return [fallback] if values is None else list(values)

    def seeds(self) -> list[int]:
        return self.sweep_axis("seeds", self.seed)

    def with_values(self, values: dict) -> "ExperimentConfig":
        """Copy with dotted keys replaced, e.g. {"pgp.beta": 0.01}."""
        data = copy.deepcopy(self.data)
        for dotted, v in values.items():
            _assign(data, dotted.split("."), v)
        return validate(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)


def _assign(data: dict, path, value) -> None:
    node = data
    for key in path[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"{'.'.join(path)}: '{key}' is not a section")
        node = node[key]
    node[path[-1]] = value


def _merge(defaults: dict, user: dict, path: tuple) -> dict:
    if not isinstance(user, dict):
        raise ConfigError(f"{'.'.join(path) or '<root>'}: expected a mapping, got {type(user).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = path + (str(key),)
        if key not in defaults:
            raise ConfigError(f"{'.'.join(where)}: unknown key")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _check_types(defaults: dict, data: dict, path: tuple) -> None:
    for key, default in defaults.items():
        where = path + (key,)
        value = data[key]
        name = ".".join(where)
        if isinstance(default, dict):
            _check_types(default, value, where)
            continue
        if value is None:
            if where not in _NULLABLE:
                raise ConfigError(f"{name}: value required")
            continue
        if isinstance(default, bool) or default is None:
            continue
        if isinstance(default, int) and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        if isinstance(default, float) and (not isinstance(value, (int, float)) or isinstance(value, bool)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        if isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")


def validate(data: dict) -> ExperimentConfig:
    merged = _merge(DEFAULTS, data, ())
    _check_types(DEFAULTS, merged, ())
    if merged["algorithm"] not in ALGORITHMS:
        raise ConfigError(f"algorithm: must be one of {ALGORITHMS}, got {merged['algorithm']!r}")
    if merged["constraint"]["kind"] not in CONSTRAINT_KINDS:
        raise ConfigError(f"constraint.kind: must be one of {CONSTRAINT_KINDS}")
    if merged["workers"] < 1:
        raise ConfigError("workers: must be >= 1")
    for axis, values in merged["sweep"].items():
        if values is None:
            continue
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{axis}: must be a non-empty list")
        if axis == "seeds" and len(set(values)) != len(values):
            raise ConfigError("sweep.seeds: seeds must be distinct")
    env_map = merged["environment"]["map"]
    if env_map is not None and not (isinstance(env_map, list) and all(isinstance(r, str) for r in env_map)):
        raise ConfigError("environment.map: must be a list of strings")
    return ExperimentConfig(merged)


def parse_override(text: str) -> tuple[list[str], object]:
    """'pgp.beta=0.01' -> (['pgp', 'beta'], 0.01); the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override '{text}': expected key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if not all(path):
        raise ConfigError(f"override '{text}': empty key segment")
    return path, yaml.safe_load(raw)


def load_config(path: str | Path | None = None, overrides=(), seed: int | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for depth, key in enumerate(keys[:-1]):
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{'.'.join(keys[:depth + 1])}: not a section")
        node[keys[-1]] = value
    if seed is not None:
        data["seed"] = seed
    return validate(data)
