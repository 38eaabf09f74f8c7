"""Composite objective, optimizer loop, metrics, ablations, and sweeps."""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import GradientTape, Tensor, no_grad
from .data import ConfigError, DatasetSplit, Sample, apply_temporal_shuffle
from .fcca import decorr_loss, purity_loss
from .model import TSDAModel
from .recouple import bce, orth_loss, prior_target

LOG_COLUMNS = ("epoch", "task", "pur", "decorr", "orth", "cal", "total", "val_mae", "val_acc7")

ABLATION_SWITCHES = (
    "drop_modality_L", "drop_modality_V", "drop_modality_A",
    "no_temporal", "no_spatial", "no_st_disen", "no_fcca",
    "fusion_sum", "fusion_concat",
    "no_pur", "no_decorr", "no_orth", "ce_loss",
)

SWEEP_PARAMS = ("alpha", "beta", "gamma")


class NumericalAbort(RuntimeError):
    """Raised when the loss becomes non-finite; carries the batch diagnostic."""

    def __init__(self, message: str, batch_ids: list[str]):
        super().__init__(message)
        self.batch_ids = batch_ids


@dataclass
class LossReport:
    task: float
    pur: float
    decorr: float
    orth: float
    cal: float
    total: float
    flags: list[str] = field(default_factory=list)


@dataclass
class MetricReport:
    mae: float
    acc7: float
    acc2_negpos: float
    acc2_neg_nonneg: float
    macro_f1: float


@dataclass
class TrainResult:
    model: TSDAModel
    log_rows: list[dict]
    best_epoch: int
    best_val_mae: float


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def _derangement(rng: np.random.Generator, n: int) -> np.ndarray:
    if n == 2:
        return np.array([1, 0])
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def _task_term(pred: Tensor, label: float, mode: str) -> Tensor:
    if mode == "regression":
        diff = pred - label
        return diff * diff
    # 7-class cross-entropy over rounded, clamped labels
    cls = int(np.clip(round(label), -3, 3)) + 3
    shifted = pred - Tensor(float(pred.data.max()))
    log_z = T.log(T.reduce_sum(T.exp(shifted)))
    return log_z - T.reshape(T.slice_rows(T.reshape(shifted, (7, 1)), cls, cls + 1), ())


def _calibration_loss(model: TSDAModel, batch, fwds, cfg: dict, step_seed: int):
    loss_cfg = cfg["loss"]
    kappa1, kappa2 = loss_cfg["kappa1"], loss_cfg["kappa2"]
    lambda_prior = loss_cfg["lambda_prior"]
    flags: list[str] = []
    n = len(batch)
    rng = _stream(step_seed, 11)
    donors = _derangement(rng, n) if n >= 2 else None
    if donors is None:
        flags.append("swap_skipped_batch_size_1")
    terms = []
    for i, (sample, fwd) in enumerate(zip(batch, fwds)):
        feats = fwd.feats
        c_t_clean = feats.c_t.item()
        c_s_clean = feats.c_s.item()
        d_clean = feats.d.item()
        phi_clean = feats.phi.data.copy()
        # corrupted passes feed the gate only: features are detached constants
        with no_grad():
            shuffled = apply_temporal_shuffle(sample, seed=step_seed * 1000003 + i)
            phi_shuf = model.forward_sample(shuffled).feats.phi.data.copy()
        g_shuf = model.gate_from_phi(phi_shuf)
        term = bce(g_shuf, 0.0)
        if donors is not None:
            donor = fwds[donors[i]]
            with no_grad():
                Z_t = fwd.summaries.Z_t.data
                Z_s = donor.summaries.Z_s.data
                cos = float(Z_t @ Z_s / (np.linalg.norm(Z_t) * np.linalg.norm(Z_s)))
                c_s_swap = 1.0 - float(donor.summaries.disc_s.data.mean())
                phi_swap = np.concatenate([Z_t, Z_s, [1.0 - cos, c_t_clean, c_s_swap]])
            g_swap = model.gate_from_phi(phi_swap)
            term = term + bce(g_swap, 1.0)
        target = prior_target(c_t_clean, c_s_clean, d_clean, kappa1, kappa2)
        g_clean = model.gate_from_phi(phi_clean)
        prior_diff = g_clean - target
        term = term + lambda_prior * (prior_diff * prior_diff)
        terms.append(term)
    cal = sum(terms[1:], terms[0]) * (1.0 / n)
    return cal, flags


def batch_loss(model: TSDAModel, batch: list[Sample], cfg: dict, step_seed: int = 0):
    """Composite loss over one batch; returns (total tensor, LossReport)."""
    loss_cfg = cfg["loss"]
    alpha, beta, gamma, delta = (
        loss_cfg["alpha"], loss_cfg["beta"], loss_cfg["gamma"], loss_cfg["delta_cal"]
    )
    for name, w in (("alpha", alpha), ("beta", beta), ("gamma", gamma), ("delta_cal", delta)):
        if w < 0:
            raise ConfigError(f"loss.{name} must be nonnegative")
    mode = loss_cfg["mode"]
    n = len(batch)
    fwds = [model.forward_sample(s) for s in batch]
    task_terms = [_task_term(f.pred, s.label, mode) for f, s in zip(fwds, batch)]
    task = sum(task_terms[1:], task_terms[0]) * (1.0 / n)
    pur_terms = [purity_loss(f.summaries) for f in fwds]
    pur = sum(pur_terms[1:], pur_terms[0]) * (1.0 / n)
    decorr, flags = decorr_loss(
        [f.summaries.Z_t for f in fwds],
        [f.summaries.Z_s for f in fwds],
        loss_cfg["lambda_c"], loss_cfg["lambda_h"], loss_cfg["hsic_bandwidth"],
    )
    orth = orth_loss(model.recouple.U_t, model.recouple.U_s)
    if delta > 0 and model.uses_gate:
        cal, cal_flags = _calibration_loss(model, batch, fwds, cfg, step_seed)
        flags = flags + cal_flags
    else:
        cal = Tensor(0.0)
        if delta > 0:
            flags.append("cal_skipped_no_gate")
    total = task + alpha * pur + beta * decorr + gamma * orth + delta * cal
    report = LossReport(
        task=task.item(), pur=pur.item(), decorr=decorr.item(),
        orth=orth.item(), cal=cal.item(), total=total.item(), flags=flags,
    )
    return total, report


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with decoupled weight decay (applied before the adaptive step)."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-5):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# metrics


def _binary_f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def macro_f1_negpos(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Macro-F1 over the negative-vs-positive task, true zeros excluded."""
    mask = y_true != 0
    t = y_true[mask] > 0
    p = y_pred[mask] > 0
    if t.size == 0:
        return 0.0
    tp_pos = int(np.sum(t & p))
    fp_pos = int(np.sum(~t & p))
    fn_pos = int(np.sum(t & ~p))
    f1_pos = _binary_f1(tp_pos, fp_pos, fn_pos)
    f1_neg = _binary_f1(
        int(np.sum(~t & ~p)), int(np.sum(t & ~p)), int(np.sum(~t & p))
    )
    return 0.5 * (f1_pos + f1_neg)


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> MetricReport:
    if y_true.size == 0:
        raise ValueError("cannot evaluate an empty split")
    mae = float(np.mean(np.abs(y_pred - y_true)))
    r_true = np.clip(np.rint(y_true), -3, 3)
    r_pred = np.clip(np.rint(y_pred), -3, 3)
    acc7 = float(np.mean(r_true == r_pred))
    nz = y_true != 0
    acc2_negpos = float(np.mean((y_pred[nz] > 0) == (y_true[nz] > 0))) if nz.any() else 0.0
    acc2_nn = float(np.mean((y_pred < 0) == (y_true < 0)))
    return MetricReport(
        mae=mae, acc7=acc7, acc2_negpos=acc2_negpos,
        acc2_neg_nonneg=acc2_nn, macro_f1=macro_f1_negpos(y_true, y_pred),
    )


def evaluate(model: TSDAModel, samples: list[Sample]) -> MetricReport:
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    y_true = np.array([s.label for s in samples])
    y_pred = np.array([model.predict(s) for s in samples])
    return compute_metrics(y_true, y_pred)


# ---------------------------------------------------------------------------
# training loop


def train(cfg: dict, dataset: DatasetSplit) -> TrainResult:
    """Mini-batch training with early stopping on validation MAE."""
    if not dataset.train or not dataset.val:
        raise ValueError("training requires nonempty train and val splits")
    tr = cfg["train"]
    model = TSDAModel(cfg, seed=tr["seed"])
    opt = Adam(model.parameters(), lr=tr["lr"], weight_decay=tr["weight_decay"])
    shuffle_rng = _stream(tr["seed"], 7)
    batch_size = tr["batch_size"]
    log_rows: list[dict] = []
    best_val = np.inf
    best_state = model.state_arrays()
    best_epoch = 0
    stale = 0
    step = 0
    for epoch in range(1, tr["max_epochs"] + 1):
        order = shuffle_rng.permutation(len(dataset.train))
        sums = dict.fromkeys(("task", "pur", "decorr", "orth", "cal", "total"), 0.0)
        seen = 0
        for start in range(0, len(order), batch_size):
            batch = [dataset.train[i] for i in order[start:start + batch_size]]
            step += 1
            with GradientTape() as tape:
                total, report = batch_loss(model, batch, cfg, step_seed=tr["seed"] * 100000 + step)
                if not np.isfinite(report.total):
                    raise NumericalAbort(
                        f"non-finite loss at epoch {epoch}, step {step}; "
                        f"batch sample ids: {[s.sample_id for s in batch]}",
                        [s.sample_id for s in batch],
                    )
                tape.backward(total)
            opt.step()
            opt.zero_grad()
            for key in sums:
                sums[key] += getattr(report, key) * len(batch)
            seen += len(batch)
        val = evaluate(model, dataset.val)
        row = {"epoch": epoch}
        row.update({k: sums[k] / seen for k in sums})
        row["val_mae"] = val.mae
        row["val_acc7"] = val.acc7
        log_rows.append(row)
        if val.mae < best_val:
            best_val = val.mae
            best_state = model.state_arrays()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tr["patience"]:
                break
    model.load_state_arrays(best_state)
    return TrainResult(model=model, log_rows=log_rows, best_epoch=best_epoch, best_val_mae=best_val)


def write_train_log(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["epoch"]] + [f"{row[c]:.12g}" for c in LOG_COLUMNS[1:]]
            )


# ---------------------------------------------------------------------------
# ablations and sweeps


def apply_switch(cfg: dict, switch: str) -> dict:
    if switch not in ABLATION_SWITCHES:
        raise ConfigError(
            f"unknown ablation switch '{switch}'; valid switches: {', '.join(ABLATION_SWITCHES)}"
        )
    cfg = copy.deepcopy(cfg)
    if switch.startswith("drop_modality_"):
        cfg["model"]["drop_modalities"] = [switch[-1]]
    elif switch in ("no_temporal", "no_spatial", "no_st_disen", "no_fcca"):
        cfg["model"][switch] = True
    elif switch == "fusion_sum":
        cfg["model"]["fusion"] = "sum"
    elif switch == "fusion_concat":
        cfg["model"]["fusion"] = "concat"
    elif switch == "no_pur":
        cfg["loss"]["alpha"] = 0.0
    elif switch == "no_decorr":
        cfg["loss"]["beta"] = 0.0
    elif switch == "no_orth":
        cfg["loss"]["gamma"] = 0.0
    elif switch == "ce_loss":
        cfg["loss"]["mode"] = "classification"
    return cfg


def ablate(cfg: dict, dataset: DatasetSplit, switches: list[str]) -> list[dict]:
    """Train the full model plus each variant under identical seeds."""
    for s in switches:
        if s not in ABLATION_SWITCHES:
            raise ConfigError(
                f"unknown ablation switch '{s}'; valid switches: {', '.join(ABLATION_SWITCHES)}"
            )
    rows = []
    full = train(cfg, dataset)
    val = evaluate(full.model, dataset.val)
    rows.append({"variant": "full", "val_mae": val.mae, "val_acc7": val.acc7})
    for s in switches:
        result = train(apply_switch(cfg, s), dataset)
        val = evaluate(result.model, dataset.val)
        rows.append({"variant": s, "val_mae": val.mae, "val_acc7": val.acc7})
    return rows


def sensitivity_sweep(cfg: dict, dataset: DatasetSplit, param: str, values: list[float]):
    """One training run per weight value; returns (rows, warnings)."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}, got '{param}'")
    warnings = []
    seen = set()
    unique = []
    for v in values:
        if v <= 0:
            raise ConfigError(f"sweep values must be positive, got {v}")
        if v in seen:
            warnings.append(f"duplicate sweep value {v} ignored")
            continue
        seen.add(v)
        unique.append(v)
    rows = []
    for v in unique:
        run_cfg = copy.deepcopy(cfg)
        run_cfg["loss"][param] = v
        result = train(run_cfg, dataset)
        val = evaluate(result.model, dataset.val)
        rows.append({"value": v, "mae": val.mae, "acc7": val.acc7})
    return rows, warnings


# ---------------------------------------------------------------------------
# interventions


def _swapped_prediction(model: TSDAModel, fwd_own, fwd_donor):
    """Prediction and gate with the spatial summary taken from a donor."""
    from . import recouple as rc

    with no_grad():
        Z_t = fwd_own.summaries.Z_t
        Z_s = fwd_donor.summaries.Z_s
        cos = T.dot(Z_t, Z_s) / T.sqrt(T.dot(Z_t, Z_t) * T.dot(Z_s, Z_s))
        d = 1.0 - cos.item()
        c_t = float(fwd_own.summaries.disc_t.data.mean())
        c_s = 1.0 - float(fwd_donor.summaries.disc_s.data.mean())
        phi = np.concatenate([Z_t.data, Z_s.data, [d, c_t, c_s]])
        g = model.gate_from_phi(phi)
        z_hat = rc.recouple(Z_t, Z_s, g, model.recouple)
        pred = T.dot(model.head_w, z_hat) + model.head_b
    return pred.item(), g.item()


def intervention_report(model: TSDAModel, samples: list[Sample], seed: int) -> list[dict]:
    """Test metrics and mean gate under clean / shuffle / swap conditions."""
    if not samples:
        raise ValueError("cannot run interventions on an empty split")
    if not model.uses_gate:
        raise ValueError("interventions require the gated fusion path")
    with no_grad():
        fwds = [model.forward_sample(s) for s in samples]
    y_true = np.array([s.label for s in samples])
    clean_pred = np.array([f.pred.item() for f in fwds])
    clean_gate = np.array([f.g.item() for f in fwds])

    shuf_pred, shuf_gate = [], []
    for i, s in enumerate(samples):
        shuffled = apply_temporal_shuffle(s, seed=seed * 7919 + i)
        with no_grad():
            f = model.forward_sample(shuffled)
        shuf_pred.append(f.pred.item())
        shuf_gate.append(f.g.item())

    rng = _stream(seed, 13)
    donors = _derangement(rng, len(samples))
    swap_pred, swap_gate = [], []
    for i in range(len(samples)):
        pred, g = _swapped_prediction(model, fwds[i], fwds[donors[i]])
        swap_pred.append(pred)
        swap_gate.append(g)

    def row(name, preds, gates):
        return {
            "condition": name,
            "mae": float(np.mean(np.abs(np.array(preds) - y_true))),
            "mean_gate": float(np.mean(gates)),
        }

    return [
        row("clean", clean_pred, clean_gate),
        row("temporal_shuffle", shuf_pred, shuf_gate),
        row("static_swap", swap_pred, swap_gate),
    ]
