"""Experiment configuration: JSON in, validated dataclass out.

A config names a model (builtin + params, or a model file), a task, and the
task's numeric parameters.  Command-line flags override config fields which
override defaults.  Validation collects every problem with its field path
before failing, and the parsed config serialises back to an equal document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

__all__ = ["ExperimentConfig", "parse_config", "load_config", "TASKS"]

# canonical task names plus accepted aliases
TASK_ALIASES = {
    "simulate": "simulate",
    "scan": "scan",
    "lyapunov-scan": "scan",
    "dynkin": "dynkin",
    "hitting": "hitting",
    "tv": "tv",
    "tv-decay": "tv",
    "exit-time": "exit-time",
    "recurrence": "recurrence",
}
TASKS = ("simulate", "scan", "dynkin", "hitting", "tv", "exit-time", "recurrence")

_COMMON_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out": "out",
    "mode": "euler-rate",
}

# required / defaulted fields per task (beyond the common ones)
_TASK_FIELDS = {
    "simulate": {"required": ["T", "dt"], "defaults": {"n_paths": 1, "init": {"x": 0.0, "i": 1}}},
    "scan": {"required": ["kind", "sampler"], "defaults": {"V": {"builtin": "example1"}, "constants": None}},
    "dynkin": {"required": ["T", "dt", "n_paths"],
               "defaults": {"V": {"builtin": "example1"}, "init": {"x": 0.0, "i": 1},
                            "halving": None}},
    "hitting": {"required": ["dt", "t_max", "n_paths", "target"],
                "defaults": {"init": {"x": 0.0, "i": 1}, "boundary": "grid"}},
    "tv": {"required": ["dt", "n_paths", "times", "init_a", "init_b"],
           "defaults": {"bins": {"lo": -5.0, "hi": 5.0, "cells": 25, "regime_cap": 2}}},
    "exit-time": {"required": ["domain", "h", "K", "coefficients"],
                  "defaults": {"tol": 1e-10, "m_max": 10_000, "probes": None}},
    "recurrence": {"required": ["D1", "k_schedule", "K", "h", "coefficients", "probes"],
                   "defaults": {"tol_rec": 1e-3, "tol": 1e-10, "m_max": 10_000}},
}

_MODEL_TASKS = ("simulate", "scan", "dynkin", "hitting", "tv")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    options: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.options[key]

    def get(self, key, default=None):
        return self.options.get(key, default)

    def to_dict(self) -> dict:
        return {"task": self.task, **self.options}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _positive(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def parse_config(doc: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a config document; collect all errors with field paths."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    doc = dict(doc)
    if overrides:
        for k, v in overrides.items():
            if v is not None:
                doc[k] = v
    errors = []

    task_raw = doc.pop("task", None)
    if task_raw is None:
        errors.append("task: missing")
        task = None
    else:
        task = TASK_ALIASES.get(str(task_raw))
        if task is None:
            errors.append(f"task: unknown {task_raw!r} (choose from {sorted(set(TASK_ALIASES))})")
    if errors:
        raise ConfigError("; ".join(errors))

    spec = _TASK_FIELDS[task]
    options = dict(_COMMON_DEFAULTS)
    options.update(spec["defaults"])
    known = set(options) | set(spec["required"]) | {"model"}
    for key, value in doc.items():
        if key not in known:
            errors.append(f"{key}: unknown field for task {task}")
        options[key] = value

    for req in spec["required"]:
        if options.get(req) is None:
            errors.append(f"{req}: missing (required for task {task})")

    if task in _MODEL_TASKS:
        model = options.get("model")
        if model is None:
            errors.append(f"model: missing (required for task {task})")
        elif not isinstance(model, dict) or not ({"builtin", "file"} & set(model)):
            errors.append("model: expected {'builtin': name, ...} or {'file': path}")

    for key in ("T", "dt", "t_max", "h", "tol", "tol_rec"):
        if options.get(key) is not None and not _positive(options[key]):
            errors.append(f"{key}: must be a positive number")
    for key in ("n_paths", "threads", "K", "m_max"):
        v = options.get(key)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 1):
            errors.append(f"{key}: must be a positive integer")
    if options.get("seed") is not None and not isinstance(options["seed"], int):
        errors.append("seed: must be an integer")
    if options.get("mode") not in ("euler-rate", "thinning"):
        errors.append("mode: must be 'euler-rate' or 'thinning'")

    if errors:
        raise ConfigError("; ".join(errors))
    return ExperimentConfig(task=task, options=options)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return parse_config(doc, overrides)
