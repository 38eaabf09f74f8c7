"""The assembled model: encoders -> alignment -> gated recoupling -> head."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .data import MODALITIES, Sample
from .encoders import (
    SpatialHeadParams,
    TemporalHeadParams,
    encode_spatial,
    encode_temporal,
    spatial_slots_from_hidden,
    uniform_init,
    zeros_init,
)
from .fcca import AlignedSummaries, FccaParams, build_mask, fcca_attend
from .recouple import GateFeatures, RecoupleParams, gate, gate_features, recouple

CHECKPOINT_SCHEMA_VERSION = 1
N_CLASSES = 7


@dataclass
class SampleForward:
    pred: Tensor  # scalar regression output, or [7] logits in classification
    z_hat: Tensor
    summaries: AlignedSummaries
    feats: GateFeatures | None
    g: Tensor | None


class TSDAModel:
    """Parameter container plus the per-sample forward pass.

    ``cfg`` is a resolved run config; the ``model`` section controls the
    architecture and ablation variants, the ``loss.mode`` key selects the
    prediction head.
    """

    def __init__(self, cfg: dict, seed: int):
        self.cfg = cfg
        m = cfg["model"]
        self.d_model = m["d_model"]
        self.fusion = m["fusion"]
        self.drop = set(m["drop_modalities"])
        self.no_temporal = m["no_temporal"]
        self.no_spatial = m["no_spatial"]
        self.no_st_disen = m["no_st_disen"]
        self.no_fcca = m["no_fcca"]
        self.mode = cfg["loss"]["mode"]
        d_in = cfg["data"]["d_in"]
        d = self.d_model

        rng = np.random.Generator(np.random.Philox(key=np.array([seed, 3], dtype=np.uint64)))
        self.temporal = {mod: TemporalHeadParams.create(d_in, d, rng) for mod in MODALITIES}
        self.spatial = {
            mod: SpatialHeadParams.create(d_in, d, m[f"S_{mod}"], rng) for mod in MODALITIES
        }
        self.fcca = FccaParams.create(d, rng, factor_specific=m["factor_specific_qkv"])
        self.recouple = RecoupleParams.create(d, rng, with_concat=(self.fusion == "concat"))
        if self.mode == "regression":
            self.head_w = uniform_init(rng, (d,), d)
            self.head_b = zeros_init(())
        else:
            self.head_w = uniform_init(rng, (N_CLASSES, d), d)
            self.head_b = zeros_init(N_CLASSES)
        self._mask_cache: dict[tuple, object] = {}

    @property
    def uses_gate(self) -> bool:
        return self.fusion == "gr" and not self.no_temporal and not self.no_spatial

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for mod in MODALITIES:
            params.update(self.temporal[mod].named(f"temporal.{mod}"))
            params.update(self.spatial[mod].named(f"spatial.{mod}"))
        params.update(self.fcca.named("fcca"))
        params.update(self.recouple.named("recouple"))
        params["head.w"] = self.head_w
        params["head.b"] = self.head_b
        return params

    # -- forward -----------------------------------------------------------

    def _mask_for(self, T_list, S_list):
        key = (tuple(T_list), tuple(S_list), self.no_fcca)
        mask = self._mask_cache.get(key)
        if mask is None:
            mask = build_mask(T_list, S_list)
            if self.no_fcca:
                mask.M = np.ones_like(mask.M)
            self._mask_cache[key] = mask
        return mask

    def encode(self, sample: Sample):
        F_t_list, F_s_list = [], []
        for mod in MODALITIES:
            tokens = sample.sequences[mod].tokens
            if mod in self.drop:
                tokens = np.zeros_like(tokens)
            x = Tensor(tokens)
            if self.no_st_disen:
                hidden = encode_temporal(x, self.temporal[mod])
                F_t_list.append(hidden)
                F_s_list.append(spatial_slots_from_hidden(hidden, self.spatial[mod]))
            else:
                F_t_list.append(encode_temporal(x, self.temporal[mod]))
                F_s_list.append(encode_spatial(x, self.spatial[mod]))
        return F_t_list, F_s_list

    def align(self, F_t_list, F_s_list) -> AlignedSummaries:
        mask = self._mask_for([f.shape[0] for f in F_t_list], [f.shape[0] for f in F_s_list])
        return fcca_attend(F_t_list, F_s_list, self.fcca, mask)

    def fuse(self, summaries: AlignedSummaries):
        """Returns (z_hat, feats, g); feats/g are None off the gated path."""
        Z_t, Z_s = summaries.Z_t, summaries.Z_s
        if self.no_temporal:
            return T.matmul(self.recouple.U_s, Z_s), None, None
        if self.no_spatial:
            return T.matmul(self.recouple.U_t, Z_t), None, None
        if self.fusion == "sum":
            return T.matmul(self.recouple.U_t, Z_t) + T.matmul(self.recouple.U_s, Z_s), None, None
        if self.fusion == "concat":
            return T.matmul(self.recouple.w_cat, T.concat_vec([Z_t, Z_s])), None, None
        feats = gate_features(summaries)
        g = gate(feats.phi, self.recouple)
        return recouple(Z_t, Z_s, g, self.recouple), feats, g

    def forward_sample(self, sample: Sample) -> SampleForward:
        F_t_list, F_s_list = self.encode(sample)
        summaries = self.align(F_t_list, F_s_list)
        z_hat, feats, g = self.fuse(summaries)
        if self.mode == "regression":
            pred = T.dot(self.head_w, z_hat) + self.head_b
        else:
            pred = T.matmul(self.head_w, z_hat) + self.head_b
        return SampleForward(pred=pred, z_hat=z_hat, summaries=summaries, feats=feats, g=g)

    def predict(self, sample: Sample) -> float:
        """Point prediction on the label scale, without recording gradients."""
        with T.no_grad():
            fwd = self.forward_sample(sample)
        if self.mode == "regression":
            return fwd.pred.item()
        return float(np.argmax(fwd.pred.data) - 3)

    def gate_from_phi(self, phi_values: np.ndarray) -> Tensor:
        """Gate output for fixed features; differentiates only w and b."""
        return gate(Tensor(phi_values), self.recouple)

    # -- checkpointing -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing = set(params) - set(state)
            extra = set(state) - set(params)
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, arr in state.items():
            if params[name].data.shape != arr.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            arr = np.asarray(arr, dtype=np.float64)
            # ascontiguousarray would promote 0-d arrays to shape (1,)
            if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)
            params[name].data = arr

    def save_checkpoint(self, path: str) -> None:
        payload = {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "config": self.cfg,
            "params": {
                name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                for name, t in self.parameters().items()
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load_checkpoint(cls, path: str) -> "TSDAModel":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        version = payload.get("schema_version")
        if version != CHECKPOINT_SCHEMA_VERSION:
            raise ValueError(f"unsupported checkpoint schema version: {version}")
        model = cls(payload["config"], seed=0)
        state = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["params"].items()
        }
        model.load_state_arrays(state)
        return model
