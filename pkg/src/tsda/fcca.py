"""Factor-consistent cross-modal alignment.

All temporal tokens from every modality and all spatial tokens are stacked
into one sequence; a block-diagonal mask restricts attention to tokens of
the same factor, so temporal and spatial streams exchange no messages while
still mixing across modalities. Leakage is penalized twice more: a token
discriminator (purity loss) and a summary-level decorrelation loss
combining squared cosine with a biased Gaussian-kernel HSIC estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .tensor import Tensor

DISC_HIDDEN = 16
LOG_EPS = 1e-12


@dataclass
class FactorMask:
    M: np.ndarray  # [(N_t+N_s) x (N_t+N_s)] binary
    n_t: int
    n_s: int
    factor_index: np.ndarray  # 0 = temporal, 1 = spatial per token


def build_mask(T_list: Sequence[int], S_list: Sequence[int]) -> FactorMask:
    """Block-diagonal within-factor mask over stacked temporal+spatial tokens."""
    if any(c < 1 for c in list(T_list) + list(S_list)):
        raise ValueError("token counts must be at least 1")
    n_t = int(sum(T_list))
    n_s = int(sum(S_list))
    factor_index = np.concatenate([np.zeros(n_t, dtype=np.int64), np.ones(n_s, dtype=np.int64)])
    M = (factor_index[:, None] == factor_index[None, :]).astype(np.float64)
    return FactorMask(M=M, n_t=n_t, n_s=n_s, factor_index=factor_index)


@dataclass
class FccaParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    # present only when factor-specific projections are enabled
    wq_s: Tensor | None
    wk_s: Tensor | None
    wv_s: Tensor | None
    disc_w1: Tensor  # [DISC_HIDDEN, d]
    disc_b1: Tensor
    disc_w2: Tensor  # [1, DISC_HIDDEN]
    disc_b2: Tensor
    factor_specific: bool = False

    @classmethod
    def create(cls, d_model: int, rng: np.random.Generator, factor_specific: bool = False):
        from .encoders import uniform_init, zeros_init

        def proj():
            return uniform_init(rng, (d_model, d_model), d_model)

        wq, wk, wv = proj(), proj(), proj()
        wq_s = wk_s = wv_s = None
        if factor_specific:
            wq_s, wk_s, wv_s = proj(), proj(), proj()
        return cls(
            wq=wq, wk=wk, wv=wv, wq_s=wq_s, wk_s=wk_s, wv_s=wv_s,
            disc_w1=uniform_init(rng, (DISC_HIDDEN, d_model), d_model),
            disc_b1=zeros_init(DISC_HIDDEN),
            disc_w2=uniform_init(rng, (1, DISC_HIDDEN), DISC_HIDDEN),
            disc_b2=zeros_init(1),
            factor_specific=factor_specific,
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k in ("wq", "wk", "wv", "wq_s", "wk_s", "wv_s",
                  "disc_w1", "disc_b1", "disc_w2", "disc_b2"):
            v = getattr(self, k)
            if v is not None:
                out[f"{prefix}.{k}"] = v
        return out


@dataclass
class AlignedSummaries:
    H_t_aligned: Tensor  # [N_t, d]
    H_s_aligned: Tensor  # [N_s, d]
    Z_t: Tensor  # [d]
    Z_s: Tensor  # [d]
    disc_t: Tensor  # [N_t] in (0, 1)
    disc_s: Tensor  # [N_s]
    attn: Tensor  # [N, N] post-softmax weights


def _discriminate(rows: Tensor, params: FccaParams) -> Tensor:
    hidden = T.tanh(T.matmul(rows, T.transpose(params.disc_w1)) + params.disc_b1)
    logits = T.matmul(hidden, T.transpose(params.disc_w2)) + params.disc_b2
    return T.reshape(T.sigmoid(logits), (rows.shape[0],))


def fcca_attend(
    F_t_list: Sequence[Tensor],
    F_s_list: Sequence[Tensor],
    params: FccaParams,
    mask: FactorMask,
) -> AlignedSummaries:
    """Joint masked attention over both factors, pooled to summaries."""
    H_t = T.concat_rows(F_t_list)
    H_s = T.concat_rows(F_s_list)
    if H_t.shape[0] != mask.n_t or H_s.shape[0] != mask.n_s:
        raise T.DimensionError(
            f"mask built for ({mask.n_t}, {mask.n_s}) tokens, "
            f"got ({H_t.shape[0]}, {H_s.shape[0]})"
        )
    H = T.concat_rows([H_t, H_s])
    d = H.shape[1]
    if params.factor_specific:
        Q = T.concat_rows([T.matmul(H_t, params.wq), T.matmul(H_s, params.wq_s)])
        K = T.concat_rows([T.matmul(H_t, params.wk), T.matmul(H_s, params.wk_s)])
        V = T.concat_rows([T.matmul(H_t, params.wv), T.matmul(H_s, params.wv_s)])
    else:
        Q = T.matmul(H, params.wq)
        K = T.matmul(H, params.wk)
        V = T.matmul(H, params.wv)
    scores = T.matmul(Q, T.transpose(K)) * (1.0 / math.sqrt(d))
    # additive sentinel instead of log(M): avoids 0 * (-inf) while agreeing
    # with the exact-zero mask to below 1e-12 after the softmax
    scores = scores + Tensor(T.MASK_SENTINEL * (1.0 - mask.M))
    attn = T.softmax_rows(scores)
    aligned = T.matmul(attn, V)
    H_t_aligned = T.slice_rows(aligned, 0, mask.n_t)
    H_s_aligned = T.slice_rows(aligned, mask.n_t, mask.n_t + mask.n_s)
    return AlignedSummaries(
        H_t_aligned=H_t_aligned,
        H_s_aligned=H_s_aligned,
        Z_t=T.reduce_mean(H_t_aligned, axis=0),
        Z_s=T.reduce_mean(H_s_aligned, axis=0),
        disc_t=_discriminate(H_t_aligned, params),
        disc_s=_discriminate(H_s_aligned, params),
        attn=attn,
    )


def purity_loss(summaries: AlignedSummaries) -> Tensor:
    """Mean -log D over temporal tokens plus mean -log(1 - D) over spatial."""
    dt = T.clip(summaries.disc_t, LOG_EPS, 1.0)
    ds = T.clip(1.0 - summaries.disc_s, LOG_EPS, 1.0)
    return T.reduce_mean(-T.log(dt)) + T.reduce_mean(-T.log(ds))


def cos_sq(a: Tensor, b: Tensor) -> Tensor:
    """Squared cosine similarity of two vectors."""
    num = T.dot(a, b)
    return num * num / (T.dot(a, a) * T.dot(b, b))


def hsic_biased(Z_a: Tensor, Z_b: Tensor, bandwidth="median") -> Tensor:
    """Biased empirical HSIC over paired rows of Z_a, Z_b [n, d].

    Gaussian kernels; bandwidth per argument is the median pairwise distance
    (fallback 1.0 when the median is 0) or a fixed positive float. The
    bandwidth is treated as a constant when differentiating.
    """
    n = Z_a.shape[0]
    if n < 2:
        raise ValueError("HSIC needs at least 2 samples")
    if bandwidth == "median":
        sigma_a = kernels.median_bandwidth(Z_a.data)
        sigma_b = kernels.median_bandwidth(Z_b.data)
    else:
        sigma_a = sigma_b = float(bandwidth)
        if sigma_a <= 0:
            raise ValueError("hsic bandwidth must be positive")
    K = T.gaussian_gram(Z_a, sigma_a)
    L = T.gaussian_gram(Z_b, sigma_b)
    H = Tensor(np.eye(n) - np.ones((n, n)) / n)
    inner = T.matmul(T.matmul(K, H), T.matmul(L, H))
    return T.trace(inner) * (1.0 / (n - 1) ** 2)


def decorr_loss(
    Z_t_list: Sequence[Tensor],
    Z_s_list: Sequence[Tensor],
    lambda_c: float,
    lambda_h: float,
    bandwidth="median",
):
    """Batch decorrelation: mean squared cosine plus HSIC over summaries.

    Returns (loss, flags); the HSIC term is skipped (and flagged) when the
    batch has fewer than 2 samples.
    """
    n = len(Z_t_list)
    flags: list[str] = []
    cos_terms = [cos_sq(zt, zs) for zt, zs in zip(Z_t_list, Z_s_list)]
    total = sum(cos_terms[1:], cos_terms[0]) * (lambda_c / n)
    if n >= 2:
        Z_t_m = T.stack_rows(Z_t_list)
        Z_s_m = T.stack_rows(Z_s_list)
        total = total + hsic_biased(Z_t_m, Z_s_m, bandwidth) * lambda_h
    else:
        flags.append("hsic_skipped_batch_lt_2")
    return total, flags
