"""Run configuration: JSON file plus dotted-key CLI overrides, validated
strictly, and the end-of-run manifest."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from datetime import datetime, timezone

from .evaluation import EvalConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


# Defaults mirror the dataclass defaults; `eval.seed: None` means "use the
# prepared dataset's data seed".
DEFAULTS = {
    "data_dir": None,
    "out_dir": "runs",
    "log_level": "INFO",
    "data_seed": 7,
    "train_seed": 0,
    "threshold": 4,
    "user_frac": 0.1,
    "item_frac": 0.1,
    "train": {
        "learning_rate": 0.005,
        "epochs": 50,
        "batch_size": 1024,
        "bce_negatives": 4,
        "cl_negatives": 16,
        "early_stop_patience": 5,
        "val_fraction": 0.05,
    },
    "model": {
        "embed_dim": 64,
        "gcn_layers": 2,
        "temperature": 0.2,
        "cl_weight": 0.5,
        "adaptive_selection": True,
        "multimodal_fusion": True,
        "contrastive": True,
        "gcn": True,
        "nce_positive_in_denominator": True,
    },
    "eval": {
        "k": 10,
        "candidate_negatives": 99,
        "seed": None,
    },
}


def _check_keys(given: dict, allowed: dict, prefix: str = "") -> list[str]:
    unknown = []
    for key, value in given.items():
        path = f"{prefix}{key}"
        if key not in allowed:
            unknown.append(path)
        elif isinstance(allowed[key], dict) and isinstance(value, dict):
            unknown.extend(_check_keys(value, allowed[key], prefix=f"{path}."))
    return unknown


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are allowed unquoted
    return path, value


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    cfg = copy.deepcopy(cfg)
    for text in overrides:
        path, value = _parse_override(text)
        node = cfg
        for part in path[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {'.'.join(path)!r}")
            node = node[part]
        if path[-1] not in node:
            raise ConfigError(f"unknown config key {'.'.join(path)!r}")
        node[path[-1]] = value
    return cfg


class RunConfig:
    """Resolved configuration with typed accessors."""

    def __init__(self, raw: dict):
        self.raw = raw

    def __getitem__(self, key):
        return self.raw[key]

    def train_config(self) -> TrainConfig:
        try:
            model = ModelConfig(**self.raw["model"])
            return TrainConfig(seed=self.raw["train_seed"], model=model,
                               **self.raw["train"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid train/model config: {e}") from e

    def eval_config(self, default_seed: int | None = None) -> EvalConfig:
        e = dict(self.raw["eval"])
        if e.get("seed") is None:
            e["seed"] = self.raw["data_seed"] if default_seed is None else default_seed
        try:
            return EvalConfig(**e)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid eval config: {err}") from err

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def resolve_config(config_path: str | None, overrides: list[str],
                   flag_values: dict | None = None) -> RunConfig:
    """defaults < config file < --override < explicit CLI flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        try:
            with open(config_path) as f:
                file_cfg = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must contain a JSON object")
        unknown = _check_keys(file_cfg, DEFAULTS)
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
        cfg = _merge(cfg, file_cfg)
    cfg = apply_overrides(cfg, overrides or [])
    for key, value in (flag_values or {}).items():
        if value is not None:
            cfg[key] = value
    unknown = _check_keys(cfg, DEFAULTS)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    rc = RunConfig(cfg)
    rc.train_config()
    rc.eval_config(default_seed=0)
    return rc


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, command: str, config: dict,
                   input_paths: list[str], artifacts: list[str],
                   started: datetime, extra: dict | None = None) -> str:
    """Atomically write the run manifest listing every output file."""
    manifest = {
        "command": command,
        "config": config,
        "data_seed": config.get("data_seed"),
        "train_seed": config.get("train_seed"),
        "input_hashes": {p: file_hash(p) for p in input_paths if os.path.isfile(p)},
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "artifacts": sorted(artifacts),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "run_manifest.json")
    tmp = path + ".tmp"
    os.makedirs(out_dir, exist_ok=True)
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    os.replace(tmp, path)
    return path
