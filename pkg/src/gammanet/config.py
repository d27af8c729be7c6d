"""Run configuration: defaults, JSON file, flag overrides, validation."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


DEFAULTS = {
    "data": {"dir": None, "split_ratios": [7, 1, 2]},
    "model": asdict(ModelConfig()),
    "train": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(TrainConfig()).items()},
    "analysis": {"attention_threshold": 0.1, "peak_window": 12, "probe_windows": 64},
}


def _merge(base: dict, override: dict, problems: list[str], where: str = "") -> None:
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            problems.append(f"unknown key {path!r}")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                problems.append(f"{path!r} must be an object")
                continue
            _merge(base[key], value, problems, path)
        else:
            base[key] = value


def _check_types(doc: dict, problems: list[str]) -> dict:
    """Record ill-typed fields; return a copy of ``doc`` with those fields reset to defaults."""
    clean = copy.deepcopy(doc)
    for section, cls in (("model", ModelConfig), ("train", TrainConfig)):
        for f in fields(cls):
            v = doc[section][f.name]
            default = DEFAULTS[section][f.name]
            if isinstance(default, bool):
                ok = isinstance(v, bool)
            elif isinstance(default, int):
                ok = isinstance(v, int) and not isinstance(v, bool)
            elif isinstance(default, float):
                ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            elif isinstance(default, list):
                ok = isinstance(v, (list, tuple)) and len(v) == len(default)
            else:
                ok = isinstance(v, type(default))
            if not ok:
                problems.append(f"{section}.{f.name} has invalid value {v!r}")
                clean[section][f.name] = copy.deepcopy(default)
    ratios = doc["data"]["split_ratios"]
    if not (isinstance(ratios, (list, tuple)) and len(ratios) == 3
            and all(isinstance(r, (int, float)) and r > 0 for r in ratios)):
        problems.append(f"data.split_ratios must be three positive numbers, got {ratios!r}")
    a = doc["analysis"]
    if not isinstance(a["attention_threshold"], (int, float)):
        problems.append("analysis.attention_threshold must be a number")
    if not (isinstance(a["peak_window"], int) and a["peak_window"] >= 1):
        problems.append("analysis.peak_window must be a positive integer")
    if not (isinstance(a["probe_windows"], int) and a["probe_windows"] >= 1):
        problems.append("analysis.probe_windows must be a positive integer")
    return clean


def build(file_doc: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge defaults < config file < flag overrides and validate; all problems reported together."""
    doc = copy.deepcopy(DEFAULTS)
    problems: list[str] = []
    for layer in (file_doc or {}, overrides or {}):
        _merge(doc, layer, problems)
    if not problems:
        clean = _check_types(doc, problems)
        problems += model_config(clean).validate() + train_config(clean).validate()
    if problems:
        raise ConfigError(problems)
    return doc


def load(path: str | Path | None, overrides: dict | None = None) -> dict:
    file_doc = None
    if path is not None:
        try:
            with open(path) as fh:
                file_doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        if not isinstance(file_doc, dict):
            raise ConfigError([f"config {path} must be a JSON object"])
    return build(file_doc, overrides)


def model_config(doc: dict) -> ModelConfig:
    return ModelConfig(**doc["model"])


def train_config(doc: dict) -> TrainConfig:
    return TrainConfig.from_dict(doc["train"])


def save(doc: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
