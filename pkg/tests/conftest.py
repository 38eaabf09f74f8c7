"""Shared config builders and expensive session-scoped training fixtures."""

import numpy as np
import pytest

from tsda.config import resolve_config
from tsda.data import GeneratorConfig, generate


def build_cfg(data=None, model=None, train=None, loss=None):
    overrides = {}
    if data:
        overrides["data"] = data
    if model:
        overrides["model"] = model
    if train:
        overrides["train"] = train
    cfg = resolve_config(overrides)
    if loss:
        cfg["loss"].update(loss)
    return cfg


def generate_for(cfg, seed):
    d = cfg["data"]
    return generate(
        GeneratorConfig(
            T_L=d["T_L"], T_V=d["T_V"], T_A=d["T_A"], d_in=d["d_in"],
            n_train=d["n_train"], n_val=d["n_val"], n_test=d["n_test"],
            noise_sigma=d["noise_sigma"], w_t=d["w_t"], w_s=d["w_s"],
        ),
        seed,
    )


def small_cfg(seed=0, **loss):
    """Smallest config that exercises every module; used for grad checks."""
    return build_cfg(
        data={"T_L": 4, "T_V": 5, "T_A": 6, "d_in": 3,
              "n_train": 8, "n_val": 4, "n_test": 4},
        model={"d_model": 8, "S_L": 2, "S_V": 2, "S_A": 2},
        train={"batch_size": 4, "max_epochs": 2, "seed": seed},
        loss=loss,
    )


def reduced_cfg(seed=0, **train_overrides):
    """Desk-scale config for multi-seed direction and trend criteria."""
    train = {"batch_size": 8, "max_epochs": 30, "patience": 30, "seed": seed}
    train.update(train_overrides)
    return build_cfg(
        data={"T_L": 8, "T_V": 10, "T_A": 12, "d_in": 6,
              "n_train": 96, "n_val": 24, "n_test": 32},
        model={"d_model": 16, "S_L": 2, "S_V": 2, "S_A": 2},
        train=train,
    )
