"""Gated recoupling of the aligned temporal and spatial summaries.

A scalar gate, driven by the summaries plus disagreement/confidence
signals, mixes two projected streams. The projections carry an
orthogonality penalty; the gate itself is calibrated with interventional
targets (temporal shuffle -> gate low, static swap -> gate high) and a
soft prior tying the clean gate to the confidence gap and disagreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .fcca import AlignedSummaries, LOG_EPS


@dataclass
class RecoupleParams:
    w: Tensor  # [2 * d_model + 3]
    b: Tensor  # scalar
    U_t: Tensor  # [d, d_model]
    U_s: Tensor  # [d, d_model]
    w_cat: Tensor | None = None  # [d, 2 * d_model], concat-fusion ablation only

    @classmethod
    def create(cls, d_model: int, rng: np.random.Generator, with_concat: bool = False):
        from .encoders import uniform_init, zeros_init

        w_cat = uniform_init(rng, (d_model, 2 * d_model), 2 * d_model) if with_concat else None
        return cls(
            w=uniform_init(rng, (2 * d_model + 3,), 2 * d_model + 3),
            b=zeros_init(()),
            U_t=uniform_init(rng, (d_model, d_model), d_model),
            U_s=uniform_init(rng, (d_model, d_model), d_model),
            w_cat=w_cat,
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w, f"{prefix}.b": self.b,
               f"{prefix}.U_t": self.U_t, f"{prefix}.U_s": self.U_s}
        if self.w_cat is not None:
            out[f"{prefix}.w_cat"] = self.w_cat
        return out


@dataclass
class GateFeatures:
    phi: Tensor  # [2 * d_model + 3] = [Z_t; Z_s; d; c_t; c_s]
    d: Tensor  # scalar disagreement, 1 - cos(Z_t, Z_s)
    c_t: Tensor  # scalar temporal confidence
    c_s: Tensor  # scalar spatial confidence


def gate_features(summaries: AlignedSummaries) -> GateFeatures:
    Z_t, Z_s = summaries.Z_t, summaries.Z_s
    cos = T.dot(Z_t, Z_s) / T.sqrt(T.dot(Z_t, Z_t) * T.dot(Z_s, Z_s))
    d = 1.0 - cos
    c_t = T.reduce_mean(summaries.disc_t)
    c_s = 1.0 - T.reduce_mean(summaries.disc_s)
    phi = T.concat_vec([Z_t, Z_s, d, c_t, c_s])
    return GateFeatures(phi=phi, d=d, c_t=c_t, c_s=c_s)


def gate(phi: Tensor, params: RecoupleParams) -> Tensor:
    """g = sigmoid(w . phi + b), a scalar in (0, 1)."""
    return T.sigmoid(T.dot(params.w, phi) + params.b)


def recouple(Z_t: Tensor, Z_s: Tensor, g: Tensor, params: RecoupleParams) -> Tensor:
    """Fused summary g * U_t Z_t + (1 - g) * U_s Z_s."""
    return g * T.matmul(params.U_t, Z_t) + (1.0 - g) * T.matmul(params.U_s, Z_s)


def orth_loss(U_t: Tensor, U_s: Tensor) -> Tensor:
    """Squared Frobenius norm of U_t^T U_s."""
    if U_t.shape[0] != U_s.shape[0]:
        raise T.DimensionError(
            f"orth_loss row dimensions disagree: {U_t.shape} vs {U_s.shape}"
        )
    return T.frobenius_norm_sq(T.matmul(T.transpose(U_t), U_s))


def bce(g: Tensor, target: float) -> Tensor:
    """Binary cross-entropy of a scalar gate against a 0/1 target."""
    if target == 1.0:
        return -T.log(T.clip(g, LOG_EPS, 1.0))
    if target == 0.0:
        return -T.log(T.clip(1.0 - g, LOG_EPS, 1.0))
    p = T.clip(g, LOG_EPS, 1.0 - LOG_EPS)
    return -(target * T.log(p) + (1.0 - target) * T.log(1.0 - p))


def prior_target(c_t: float, c_s: float, d: float, kappa1: float, kappa2: float) -> float:
    """Soft-prior gate level: larger when c_t - c_s and d are larger."""
    return float(1.0 / (1.0 + np.exp(-(kappa1 * (c_t - c_s) + kappa2 * d))))
