"""Run configuration: documented defaults, strict key validation, echo."""

from __future__ import annotations

import copy
import json
import os

from .data import ConfigError

DEFAULT_CONFIG: dict = {
    "data": {
        "T_L": 20, "T_V": 30, "T_A": 40,
        "d_in": 8,
        "n_train": 800, "n_val": 100, "n_test": 200,
        "noise_sigma": 0.1,
        "w_t": 2.0, "w_s": 1.0,
        "seed": 42,
    },
    "model": {
        "d_model": 32,
        "S_L": 4, "S_V": 4, "S_A": 4,
        "factor_specific_qkv": False,
        "fusion": "gr",
        "drop_modalities": [],
        "no_temporal": False,
        "no_spatial": False,
        "no_st_disen": False,
        "no_fcca": False,
    },
    "loss": {
        "alpha": 0.5, "beta": 0.5, "gamma": 0.5, "delta_cal": 0.1,
        "lambda_c": 1.0, "lambda_h": 1.0,
        "hsic_bandwidth": "median",
        "kappa1": 1.0, "kappa2": 1.0, "lambda_prior": 0.5,
        "mode": "regression",
    },
    "train": {
        "lr": 1e-3,
        "weight_decay": 1e-5,
        "batch_size": 16,
        "max_epochs": 50,
        "patience": 5,
        "seed": 42,
    },
    "io": {"out_dir": "runs"},
}

FUSION_MODES = ("gr", "sum", "concat")
TASK_MODES = ("regression", "classification")
NONNEGATIVE_LOSS_KEYS = ("alpha", "beta", "gamma", "delta_cal", "lambda_c", "lambda_h")


def resolve_config(user: dict | None) -> dict:
    """Merge a user config over the defaults, rejecting unknown keys."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    user = user or {}
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    for section, values in user.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section '{section}'")
        if not isinstance(values, dict):
            raise ConfigError(f"config section '{section}' must be an object")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown config key '{section}.{key}'")
            cfg[section][key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key in NONNEGATIVE_LOSS_KEYS:
        v = cfg["loss"][key]
        if not isinstance(v, (int, float)) or v < 0:
            raise ConfigError(f"loss.{key} must be a nonnegative number, got {v!r}")
    bw = cfg["loss"]["hsic_bandwidth"]
    if bw != "median" and not (isinstance(bw, (int, float)) and bw > 0):
        raise ConfigError("loss.hsic_bandwidth must be 'median' or a positive number")
    if cfg["loss"]["mode"] not in TASK_MODES:
        raise ConfigError(f"loss.mode must be one of {TASK_MODES}")
    if cfg["model"]["fusion"] not in FUSION_MODES:
        raise ConfigError(f"model.fusion must be one of {FUSION_MODES}")
    for key in ("d_model", "S_L", "S_V", "S_A"):
        if cfg["model"][key] < 1:
            raise ConfigError(f"model.{key} must be at least 1")
    for m in cfg["model"]["drop_modalities"]:
        if m not in ("L", "V", "A"):
            raise ConfigError(f"model.drop_modalities entries must be L/V/A, got {m!r}")
    for key in ("T_L", "T_V", "T_A", "d_in", "n_train", "n_val", "n_test"):
        v = cfg["data"][key]
        if not isinstance(v, int) or v <= 0:
            raise ConfigError(f"data.{key} must be a positive integer, got {v!r}")
    for key in ("lr", "weight_decay"):
        if cfg["train"][key] < 0:
            raise ConfigError(f"train.{key} must be nonnegative")
    for key in ("batch_size", "max_epochs", "patience"):
        if not isinstance(cfg["train"][key], int) or cfg["train"][key] < 1:
            raise ConfigError(f"train.{key} must be a positive integer")


def load_config_file(path: str | None) -> dict:
    if path is None:
        return resolve_config({})
    with open(path, "r", encoding="utf-8") as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}")
    return resolve_config(user)


def write_resolved(cfg: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
