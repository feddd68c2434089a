"""Declarative run configuration: one YAML file with nested sections for the
model, each training stage, decoding and the toy corpus. Unknown keys are
rejected so typos fail loudly, and every command echoes the effective
configuration into its output directory for reproducibility.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import UsageError
from .model import ModelConfig


def _defaults() -> dict:
    return {
        "seed": 0,
        "model": ModelConfig().to_dict(),
        "corpus": {
            "n_utts": 8,
            "n_noise": 3,
            "snr_low": 5.0,
            "snr_high": 20.0,
        },
        "pretrain": {
            "steps": 60,
            "batch_size": 4,
            "learning_rate": 5e-4,
            "warmup_steps": 20,
            "grad_clip": 5.0,
            "diversity_weight": 0.1,
            "recon_weight": 0.1,
            "negatives_from": "masked",
            "checkpoint_every": 0,
            "dtype": "float32",
        },
        "continual": {
            "steps": 120,
            "batch_size": 4,
            "learning_rate": 5e-4,
            "warmup_steps": 20,
            "grad_clip": 5.0,
            "diversity_weight": 0.1,
            "recon_weight": 0.1,
            "negatives_from": "masked",
            "freeze_quantizer": False,
            "checkpoint_every": 0,
            "dtype": "float32",
        },
        "finetune": {
            "steps": 300,
            "batch_size": 2,
            "learning_rate": 2e-4,
            "warmup_steps": 20,
            "grad_clip": 5.0,
            "freeze_encoder_steps": None,
            "checkpoint_every": 0,
            "dtype": "float32",
        },
        "decode": {
            "mode": "greedy",
            "beam_size": 16,
            "lm_weight": 0.0,
            "insertion_penalty": 0.0,
        },
    }


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise UsageError(f"config section {path or '<root>'} must be a mapping")
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise UsageError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and key != "gumbel":
            merged[key] = _merge(defaults[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(path=None) -> dict:
    """Defaults merged with the YAML file at ``path`` (if given); unknown
    keys anywhere in a known section raise UsageError."""
    defaults = _defaults()
    if path is None:
        return defaults
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"config file {path} is not valid YAML: {exc}") from exc
    # the model section tolerates partial gumbel sub-mappings
    if isinstance(loaded, dict) and isinstance(loaded.get("model"), dict):
        gumbel = loaded["model"].get("gumbel")
        if isinstance(gumbel, dict):
            base = _defaults()["model"]["gumbel"]
            unknown = set(gumbel) - set(base)
            if unknown:
                raise UsageError(f"unknown config key: model.gumbel.{sorted(unknown)[0]}")
            loaded["model"]["gumbel"] = {**base, **gumbel}
    return _merge(defaults, loaded)


def model_config_from(config: dict) -> ModelConfig:
    return ModelConfig.from_dict(copy.deepcopy(config["model"]))


def echo_config(config: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "config_used.yaml"
    target.write_text(yaml.safe_dump(config, sort_keys=True))
    return target
