"""
Synthetic CTR data with the three feature classes of a ranking model:
dense floats, pre-trained embedding vectors and categorical sparse slots.

Labels come from a logistic teacher over all three classes. Its bias is
calibrated so the teacher's positive rate equals DatasetConfig.base_rate,
then labels are flipped with probability label_noise.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, field_validator

from perturblab.core.errors import ContractViolation
from perturblab.schemas.experiment import DatasetConfig
from perturblab.services.augment import Example
from perturblab.services.numerics import Rng, derive_seed

logger = logging.getLogger(__name__)

BIAS_SEARCH_STEPS = 100


@dataclass(frozen=True)
class SyntheticTeacher:
    dense_weights: npt.NDArray[np.float64]
    embedding_weights: npt.NDArray[np.float64]  # (n_embeddings, embed_dim)
    slot_effects: npt.NDArray[np.float64]  # (n_sparse_slots, vocab_size)
    scale: float
    bias: float = 0.0

    def raw_logits(
        self,
        dense: npt.NDArray[np.float64],
        embeddings: npt.NDArray[np.float64],
        sparse_ids: npt.NDArray[np.int64],
    ) -> npt.NDArray[np.float64]:
        signal = dense @ self.dense_weights
        signal = signal + np.einsum("nke,ke->n", embeddings, self.embedding_weights)
        present = sparse_ids >= 0
        slots = np.arange(sparse_ids.shape[1])
        effects = self.slot_effects[slots[None, :], np.where(present, sparse_ids, 0)]
        signal = signal + np.sum(np.where(present, effects, 0.0), axis=1)
        return self.scale * signal

    def logits(self, dense, embeddings, sparse_ids) -> npt.NDArray[np.float64]:
        return self.raw_logits(dense, embeddings, sparse_ids) + self.bias


@dataclass
class GeneratedData:
    examples: List[Example]
    teacher: SyntheticTeacher
    logits: npt.NDArray[np.float64]
    config: DatasetConfig

    @property
    def teacher_probabilities(self) -> npt.NDArray[np.float64]:
        return _sigmoid(self.logits)


def _sigmoid(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _calibrate_bias(raw: npt.NDArray[np.float64], target_rate: float) -> float:
    """Bisection on b so that mean(sigmoid(raw + b)) == target_rate."""
    spread = float(np.max(np.abs(raw))) if raw.size else 0.0
    low, high = -spread - 50.0, spread + 50.0
    for _ in range(BIAS_SEARCH_STEPS):
        mid = 0.5 * (low + high)
        if float(np.mean(_sigmoid(raw + mid))) < target_rate:
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


def _sample_features(cfg: DatasetConfig, rng: Rng):
    n = cfg.n_examples
    dense = rng.standard_normal(n * cfg.dense_dim).reshape(n, cfg.dense_dim)
    embeddings = rng.standard_normal(n * cfg.n_embeddings * cfg.embed_dim).reshape(
        n, cfg.n_embeddings, cfg.embed_dim
    )
    sparse_ids = rng.integers(cfg.vocab_size, n * cfg.n_sparse_slots).reshape(n, cfg.n_sparse_slots)
    missing = rng.uniform(n * cfg.n_sparse_slots).reshape(n, cfg.n_sparse_slots) < cfg.missing_rate
    sparse_ids = np.where(missing, -1, sparse_ids)
    return dense, embeddings, sparse_ids


def _build_teacher(cfg: DatasetConfig, rng: Rng) -> SyntheticTeacher:
    width = cfg.dense_dim + cfg.n_embeddings * cfg.embed_dim + cfg.n_sparse_slots
    std = 1.0 / math.sqrt(width)
    return SyntheticTeacher(
        dense_weights=std * rng.standard_normal(cfg.dense_dim),
        embedding_weights=std * rng.standard_normal(cfg.n_embeddings * cfg.embed_dim).reshape(
            cfg.n_embeddings, cfg.embed_dim
        ),
        slot_effects=rng.standard_normal(cfg.n_sparse_slots * cfg.vocab_size).reshape(
            cfg.n_sparse_slots, cfg.vocab_size
        ) / math.sqrt(cfg.n_sparse_slots),
        scale=cfg.teacher_scale,
    )


def generate_dataset_with_teacher(cfg: DatasetConfig) -> GeneratedData:
    teacher_rng = Rng(derive_seed(cfg.seed, "teacher"))
    feature_rng = Rng(derive_seed(cfg.seed, "features"))
    label_rng = Rng(derive_seed(cfg.seed, "labels"))

    teacher = _build_teacher(cfg, teacher_rng)
    dense, embeddings, sparse_ids = _sample_features(cfg, feature_rng)
    raw = teacher.raw_logits(dense, embeddings, sparse_ids)
    bias = _calibrate_bias(raw, cfg.base_rate)
    teacher = SyntheticTeacher(
        dense_weights=teacher.dense_weights,
        embedding_weights=teacher.embedding_weights,
        slot_effects=teacher.slot_effects,
        scale=teacher.scale,
        bias=bias,
    )
    logits = raw + bias

    draws = label_rng.uniform(cfg.n_examples)
    flips = label_rng.uniform(cfg.n_examples) < cfg.label_noise
    labels = (draws < _sigmoid(logits)).astype(np.int64)
    labels = np.where(flips, 1 - labels, labels)

    examples = [
        Example(
            dense=dense[i].copy(),
            embeddings=[embeddings[i, k].copy() for k in range(cfg.n_embeddings)],
            sparse=[int(s) if s >= 0 else None for s in sparse_ids[i]],
            label=int(labels[i]),
        )
        for i in range(cfg.n_examples)
    ]
    logger.debug(
        "generated %d examples, positive rate %.4f (teacher bias %.4f)",
        cfg.n_examples, float(labels.mean()), bias,
    )
    return GeneratedData(examples=examples, teacher=teacher, logits=logits, config=cfg)


def generate_dataset(cfg: DatasetConfig) -> List[Example]:
    return generate_dataset_with_teacher(cfg).examples


def teacher_positive_rate(cfg: DatasetConfig, data: Optional[GeneratedData] = None) -> float:
    """Expected positive rate of the generated labels: E[p]·(1 - 2·noise) + noise."""
    data = data or generate_dataset_with_teacher(cfg)
    mean_p = float(np.mean(data.teacher_probabilities))
    return mean_p * (1.0 - 2.0 * cfg.label_noise) + cfg.label_noise


def split_dataset(
    examples: Sequence[Example], eval_fraction: float, seed: int
) -> Tuple[List[Example], List[Example]]:
    """Shuffle once and hold out the trailing eval_fraction."""
    if not 0.0 < eval_fraction < 1.0:
        raise ContractViolation(f"eval_fraction must lie in (0, 1), got {eval_fraction}")
    order = Rng(derive_seed(seed, "split")).permutation(len(examples))
    n_eval = max(1, int(round(len(examples) * eval_fraction)))
    train = [examples[i] for i in order[: len(examples) - n_eval]]
    held_out = [examples[i] for i in order[len(examples) - n_eval :]]
    return train, held_out


class ExampleRecord(BaseModel):
    """One line of a dataset snapshot."""

    model_config = ConfigDict(extra="forbid")

    dense: List[float]
    embeddings: List[List[float]]
    sparse: List[Optional[int]]
    label: int

    @field_validator("label")
    @classmethod
    def binary_label(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError("label must be 0 or 1")
        return value

    @classmethod
    def from_example(cls, ex: Example) -> "ExampleRecord":
        return cls(
            dense=[float(v) for v in ex.dense],
            embeddings=[[float(v) for v in e] for e in ex.embeddings],
            sparse=list(ex.sparse),
            label=ex.label,
        )

    def to_example(self) -> Example:
        return Example(
            dense=np.asarray(self.dense, dtype=np.float64),
            embeddings=[np.asarray(e, dtype=np.float64) for e in self.embeddings],
            sparse=list(self.sparse),
            label=self.label,
        )


def write_snapshot(examples: Sequence[Example], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ExampleRecord.from_example(ex).model_dump()) + "\n")


def read_snapshot(path: Path) -> List[Example]:
    examples: List[Example] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                examples.append(ExampleRecord.model_validate_json(line).to_example())
            except ValueError as exc:
                raise ContractViolation(f"{path}:{line_no}: {exc}") from exc
    return examples
