"""Synthetic three-modality dataset with known latent factors, plus JSONL I/O.

Each sample hides a burst amplitude (temporal factor) and a context level
(spatial factor). A handful of token positions per modality carry the burst;
all other tokens carry the context. Bursts always land in the last quarter
of each sequence, so the amplitude is order-encoded: a shuffled sequence
moves bursts out of the regime an order-sensitive encoder was trained on,
while the token multiset (and thus any permutation-invariant readout) is
untouched. The label is a clamped linear blend with the temporal weight
dominating, so interventions that destroy order have a predictable effect.
Generation uses counter-based (Philox) streams keyed by (seed, sample
index), so output never depends on generation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MODALITIES = ("L", "V", "A")

GENERATOR_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration value."""


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


@dataclass
class GeneratorConfig:
    T_L: int = 20
    T_V: int = 30
    T_A: int = 40
    d_in: int = 8
    n_train: int = 800
    n_val: int = 100
    n_test: int = 200
    noise_sigma: float = 0.1
    w_t: float = 2.0
    w_s: float = 1.0

    def validate(self):
        for name in ("T_L", "T_V", "T_A", "d_in", "n_train", "n_val", "n_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"data.{name} must be positive, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ConfigError("data.noise_sigma must be nonnegative")
        for m in MODALITIES:
            if self.token_count(m) < 2:
                raise ConfigError(f"T_{m} must be at least 2")

    def token_count(self, modality: str) -> int:
        return {"L": self.T_L, "V": self.T_V, "A": self.T_A}[modality]


@dataclass
class ModalitySequence:
    modality: str
    tokens: np.ndarray  # [T_m, d_in]

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


@dataclass
class Sample:
    sample_id: str
    label: float
    sequences: dict[str, ModalitySequence]
    latent: dict | None = None


@dataclass
class DatasetSplit:
    train: list[Sample] = field(default_factory=list)
    val: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)
    seed: int = 0

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def _mixing_vectors(config: GeneratorConfig, seed: int):
    """Unit-norm burst and context directions, one pair per modality."""
    rng = _stream(seed, 0)
    mix = {}
    for m in MODALITIES:
        bt = rng.normal(size=config.d_in)
        bs = rng.normal(size=config.d_in)
        mix[m] = (bt / np.linalg.norm(bt), bs / np.linalg.norm(bs))
    return mix


def _draw_sample(config: GeneratorConfig, seed: int, index: int, mix) -> Sample:
    rng = _stream(seed, 1 + index)
    context = rng.uniform(-1.0, 1.0)
    amplitude = rng.uniform(-2.0, 2.0)
    sequences = {}
    burst_positions = {}
    for m in MODALITIES:
        T = config.token_count(m)
        burst_dir, context_dir = mix[m]
        lo = max((3 * T) // 4, 1)  # bursts only in the last quarter: amplitude is order-encoded
        k = min(int(rng.integers(1, 4)), T - 1, T - lo)
        positions = np.sort(lo + rng.choice(T - lo, size=k, replace=False))
        tokens = np.tile(context * context_dir, (T, 1))
        tokens[positions] = amplitude * burst_dir
        if config.noise_sigma > 0:
            tokens = tokens + rng.normal(0.0, config.noise_sigma, size=tokens.shape)
        sequences[m] = ModalitySequence(m, np.ascontiguousarray(tokens))
        burst_positions[m] = [int(p) for p in positions]
    label = float(np.clip(config.w_t * amplitude + config.w_s * context, -3.0, 3.0))
    latent = {
        "burst_amplitude": float(amplitude),
        "burst_positions": burst_positions,
        "context": float(context),
    }
    return Sample(f"syn-{seed}-{index}", label, sequences, latent)


def generate(config: GeneratorConfig, seed: int) -> DatasetSplit:
    """Deterministic synthetic split; same (config, seed) is byte-identical."""
    config.validate()
    mix = _mixing_vectors(config, seed)
    counts = (config.n_train, config.n_val, config.n_test)
    samples = [
        _draw_sample(config, seed, i, mix) for i in range(sum(counts))
    ]
    n1, n2 = counts[0], counts[0] + counts[1]
    return DatasetSplit(train=samples[:n1], val=samples[n1:n2], test=samples[n2:], seed=seed)


# ---------------------------------------------------------------------------
# JSONL ingestion / export


def load_jsonl(path) -> list[Sample]:
    """Read one JSONL file into samples; ingested samples carry no latent."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"{path}: line {lineno}: invalid JSON ({e.msg})")
            if not isinstance(obj, dict):
                raise DatasetFormatError(f"{path}: line {lineno}: expected an object")
            missing = [k for k in ("id", "label", *MODALITIES) if k not in obj]
            if missing:
                raise DatasetFormatError(f"{path}: line {lineno}: missing keys {missing}")
            if not isinstance(obj["label"], (int, float)) or isinstance(obj["label"], bool):
                raise DatasetFormatError(f"{path}: line {lineno}: label is not a number")
            sequences = {}
            for m in MODALITIES:
                rows = obj[m]
                try:
                    tokens = np.asarray(rows, dtype=np.float64)
                except (TypeError, ValueError):
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: modality {m} rows are not numeric"
                    )
                if tokens.ndim != 2:
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: modality {m} has inconsistent feature width"
                    )
                sequences[m] = ModalitySequence(m, np.ascontiguousarray(tokens))
            samples.append(Sample(str(obj["id"]), float(obj["label"]), sequences, None))
    return samples


def save_jsonl(samples: list[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            obj = {
                "id": s.sample_id,
                "label": s.label,
            }
            for m in MODALITIES:
                obj[m] = [[float(v) for v in row] for row in s.sequences[m].tokens]
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_split_dir(directory) -> DatasetSplit:
    """Load train/val/test JSONL files written by the generate command."""
    import os

    split = DatasetSplit()
    for name in ("train", "val", "test"):
        path = os.path.join(directory, f"{name}.jsonl")
        if os.path.exists(path):
            setattr(split, name, load_jsonl(path))
    return split


# ---------------------------------------------------------------------------
# interventions


def apply_temporal_shuffle(sample: Sample, seed: int) -> Sample:
    """Permute each modality's token rows independently; label/latent unchanged."""
    rng = _stream(seed, 2**32)
    sequences = {}
    for m in MODALITIES:
        tokens = sample.sequences[m].tokens
        perm = rng.permutation(tokens.shape[0])
        sequences[m] = ModalitySequence(m, np.ascontiguousarray(tokens[perm]))
    return Sample(sample.sample_id, sample.label, sequences, sample.latent)
