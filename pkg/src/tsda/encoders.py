"""Per-modality factor encoders.

The temporal head is a single gated recurrent layer, so its output is causal
and order-sensitive. The spatial head is deep-set style: a tokenwise MLP,
a mean over tokens, and learned slot projections, so its output is invariant
to any permutation of the input rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_init(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class TemporalHeadParams:
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor

    @classmethod
    def create(cls, d_in: int, d_model: int, rng: np.random.Generator):
        def w():
            return uniform_init(rng, (d_model, d_in), d_in)

        def u():
            return uniform_init(rng, (d_model, d_model), d_model)

        return cls(
            wz=w(), uz=u(), bz=zeros_init(d_model),
            wr=w(), ur=u(), br=zeros_init(d_model),
            wh=w(), uh=u(), bh=zeros_init(d_model),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k) for k in
                ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")}


@dataclass
class SpatialHeadParams:
    w1: Tensor  # [d_model, d_in]
    b1: Tensor
    w2: Tensor  # [d_model, d_model]
    b2: Tensor
    slots: Tensor  # [S * d_model, d_model], one projection head per slot

    @classmethod
    def create(cls, d_in: int, d_model: int, n_slots: int, rng: np.random.Generator):
        return cls(
            w1=uniform_init(rng, (d_model, d_in), d_in),
            b1=zeros_init(d_model),
            w2=uniform_init(rng, (d_model, d_model), d_model),
            b2=zeros_init(d_model),
            slots=uniform_init(rng, (n_slots * d_model, d_model), d_model),
        )

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0] // self.slots.shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k) for k in ("w1", "b1", "w2", "b2", "slots")}


def encode_temporal(tokens, params: TemporalHeadParams) -> Tensor:
    """Ordered tokens [T, d_in] -> hidden states [T, d_model]; causal scan."""
    x = T.as_tensor(tokens)
    return T.gru_layer(
        x,
        params.wz, params.uz, params.bz,
        params.wr, params.ur, params.br,
        params.wh, params.uh, params.bh,
    )


def encode_spatial(tokens, params: SpatialHeadParams) -> Tensor:
    """Tokens [T, d_in] -> slot outputs [S, d_model], permutation-invariant."""
    x = T.as_tensor(tokens)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[1]:
        raise T.DimensionError(
            f"spatial head width mismatch: input {x.shape}, W1 {params.w1.shape}"
        )
    u = T.tanh(T.matmul(x, T.transpose(params.w1)) + params.b1)
    u = T.tanh(T.matmul(u, T.transpose(params.w2)) + params.b2)
    pooled = T.reduce_mean(u, axis=0)
    flat = T.matmul(params.slots, pooled)
    d_model = params.slots.shape[1]
    return T.reshape(flat, (params.n_slots, d_model))


def spatial_slots_from_hidden(hidden: Tensor, params: SpatialHeadParams) -> Tensor:
    """Slot projections of the mean hidden state (mixed-encoder ablation)."""
    pooled = T.reduce_mean(hidden, axis=0)
    flat = T.matmul(params.slots, pooled)
    d_model = params.slots.shape[1]
    return T.reshape(flat, (params.n_slots, d_model))
