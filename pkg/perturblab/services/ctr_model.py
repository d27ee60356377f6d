"""
A small CTR prediction model with hand-written backward pass and Adagrad.

Architecture: sparse slot values are looked up in per-slot embedding tables
(a missing or dropped slot contributes a zero vector), concatenated with the
dense block and the pre-trained embeddings, passed through one ReLU layer
(the representation r) and a linear logit; prediction = sigmoid(logit).
"""
import hashlib
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from perturblab.core.errors import ContractViolation
from perturblab.services.augment import Example
from perturblab.services.numerics import Rng, Vector

Params = Dict[str, npt.NDArray[np.float64]]

ADAGRAD_EPS = 1e-10
PARAM_NAMES = ("sparse_tables", "w_hidden", "b_hidden", "w_out", "b_out")


@dataclass
class CtrModel:
    dense_dim: int
    n_embeddings: int
    embed_dim: int
    n_sparse_slots: int
    vocab_size: int
    sparse_embed_dim: int
    hidden_dim: int
    params: Params
    accumulators: Params = field(default_factory=dict)

    def __post_init__(self):
        if not self.accumulators:
            self.accumulators = {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self) -> "CtrModel":
        return CtrModel(
            dense_dim=self.dense_dim,
            n_embeddings=self.n_embeddings,
            embed_dim=self.embed_dim,
            n_sparse_slots=self.n_sparse_slots,
            vocab_size=self.vocab_size,
            sparse_embed_dim=self.sparse_embed_dim,
            hidden_dim=self.hidden_dim,
            params={k: v.copy() for k, v in self.params.items()},
            accumulators={k: v.copy() for k, v in self.accumulators.items()},
        )

    def weight_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name in PARAM_NAMES:
            digest.update(np.ascontiguousarray(self.params[name]).tobytes())
        return digest.hexdigest()

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(v.sum())) for v in self.params.values())


def init_model(
    dense_dim: int,
    n_embeddings: int,
    embed_dim: int,
    n_sparse_slots: int,
    vocab_size: int,
    sparse_embed_dim: int,
    hidden_dim: int,
    rng: Rng,
    init_scale: float = 0.5,
) -> CtrModel:
    """Gaussian init scaled by init_scale/sqrt(fan_in); biases start at zero."""
    width = dense_dim + n_embeddings * embed_dim + n_sparse_slots * sparse_embed_dim
    tables = init_scale * rng.standard_normal(n_sparse_slots * vocab_size * sparse_embed_dim)
    w_hidden = init_scale / np.sqrt(width) * rng.standard_normal(hidden_dim * width)
    w_out = init_scale / np.sqrt(hidden_dim) * rng.standard_normal(hidden_dim)
    params: Params = {
        "sparse_tables": tables.reshape(n_sparse_slots, vocab_size, sparse_embed_dim),
        "w_hidden": w_hidden.reshape(hidden_dim, width),
        "b_hidden": np.zeros(hidden_dim),
        "w_out": w_out,
        "b_out": np.zeros(1),
    }
    return CtrModel(
        dense_dim=dense_dim,
        n_embeddings=n_embeddings,
        embed_dim=embed_dim,
        n_sparse_slots=n_sparse_slots,
        vocab_size=vocab_size,
        sparse_embed_dim=sparse_embed_dim,
        hidden_dim=hidden_dim,
        params=params,
    )


@dataclass(frozen=True)
class FeatureBatch:
    dense: npt.NDArray[np.float64]  # (B, dense_dim)
    embeddings: npt.NDArray[np.float64]  # (B, n_embeddings * embed_dim)
    sparse_ids: npt.NDArray[np.int64]  # (B, n_sparse_slots), -1 = absent
    labels: npt.NDArray[np.float64]  # (B,)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def encode_batch(examples: Sequence[Example]) -> FeatureBatch:
    if not examples:
        raise ContractViolation("cannot encode an empty batch")
    dense = np.stack([ex.dense for ex in examples])
    embeddings = np.stack(
        [np.concatenate(ex.embeddings) if ex.embeddings else np.zeros(0) for ex in examples]
    )
    sparse_ids = np.array(
        [[-1 if s is None else s for s in ex.sparse] for ex in examples], dtype=np.int64
    ).reshape(len(examples), -1)
    labels = np.array([ex.label for ex in examples], dtype=np.float64)
    return FeatureBatch(dense=dense, embeddings=embeddings, sparse_ids=sparse_ids, labels=labels)


@dataclass
class ForwardCache:
    inputs: npt.NDArray[np.float64]
    pre_activation: npt.NDArray[np.float64]
    hidden: npt.NDArray[np.float64]
    logits: npt.NDArray[np.float64]
    predictions: npt.NDArray[np.float64]
    sparse_ids: npt.NDArray[np.int64]


def _sigmoid(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_batch(model: CtrModel, batch: FeatureBatch) -> None:
    expected = (
        model.dense_dim,
        model.n_embeddings * model.embed_dim,
        model.n_sparse_slots,
    )
    got = (batch.dense.shape[1], batch.embeddings.shape[1], batch.sparse_ids.shape[1])
    if got != expected:
        raise ContractViolation(f"feature dims {got} do not match model {expected}")
    if np.any(batch.sparse_ids >= model.vocab_size):
        raise ContractViolation("sparse value outside the model vocabulary")


def _lookup(model: CtrModel, sparse_ids: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
    tables = model.params["sparse_tables"]
    present = sparse_ids >= 0
    slots = np.arange(model.n_sparse_slots)[None, :]
    rows = tables[slots, np.where(present, sparse_ids, 0)]  # (B, S, E)
    rows = np.where(present[:, :, None], rows, 0.0)
    return rows.reshape(sparse_ids.shape[0], -1)


def forward_batch(model: CtrModel, batch: FeatureBatch) -> ForwardCache:
    _check_batch(model, batch)
    inputs = np.concatenate([batch.dense, batch.embeddings, _lookup(model, batch.sparse_ids)], axis=1)
    pre = inputs @ model.params["w_hidden"].T + model.params["b_hidden"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ model.params["w_out"] + model.params["b_out"][0]
    return ForwardCache(
        inputs=inputs,
        pre_activation=pre,
        hidden=hidden,
        logits=logits,
        predictions=_sigmoid(logits),
        sparse_ids=batch.sparse_ids,
    )


def forward(model: CtrModel, ex: Example) -> Tuple[float, Vector, float]:
    """(prediction, hidden representation r, logit) for one example."""
    cache = forward_batch(model, encode_batch([ex]))
    return float(cache.predictions[0]), cache.hidden[0].copy(), float(cache.logits[0])


def backward(
    model: CtrModel,
    cache: ForwardCache,
    d_logits: npt.NDArray[np.float64],
    d_hidden: Optional[npt.NDArray[np.float64]] = None,
) -> Params:
    """Backpropagate upstream gradients on the logits (and optionally on r)."""
    grads: Params = {
        "w_out": cache.hidden.T @ d_logits,
        "b_out": np.array([np.sum(d_logits)]),
    }
    d_act = np.outer(d_logits, model.params["w_out"])
    if d_hidden is not None:
        d_act = d_act + d_hidden
    d_pre = np.where(cache.pre_activation > 0.0, d_act, 0.0)
    grads["w_hidden"] = d_pre.T @ cache.inputs
    grads["b_hidden"] = np.sum(d_pre, axis=0)

    d_inputs = d_pre @ model.params["w_hidden"]
    offset = model.dense_dim + model.n_embeddings * model.embed_dim
    d_rows = d_inputs[:, offset:].reshape(-1, model.n_sparse_slots, model.sparse_embed_dim)
    d_tables = np.zeros_like(model.params["sparse_tables"])
    batch_idx, slot_idx = np.nonzero(cache.sparse_ids >= 0)
    np.add.at(d_tables, (slot_idx, cache.sparse_ids[batch_idx, slot_idx]), d_rows[batch_idx, slot_idx])
    grads["sparse_tables"] = d_tables
    return grads


def bce_logit_gradient(cache: ForwardCache, labels: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """d(mean BCE)/d(logit) = (ŷ - y)/N."""
    return (cache.predictions - labels) / labels.shape[0]


def combine(grads: Params, extra: Params, weight: float) -> Params:
    return {k: grads[k] + weight * extra[k] for k in grads}


def adagrad_update(
    weight: npt.NDArray[np.float64],
    grad: npt.NDArray[np.float64],
    accumulator: npt.NDArray[np.float64],
    learning_rate: float,
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """accumulator += grad²; weight -= lr·grad/√(accumulator + 1e-10)."""
    if np.any(accumulator < 0):
        raise ContractViolation("Adagrad accumulator must be non-negative")
    new_accumulator = accumulator + grad * grad
    new_weight = weight - learning_rate * grad / np.sqrt(new_accumulator + ADAGRAD_EPS)
    return new_weight, new_accumulator


def apply_gradients(model: CtrModel, grads: Params, learning_rate: float) -> None:
    for name in PARAM_NAMES:
        model.params[name], model.accumulators[name] = adagrad_update(
            model.params[name], grads[name], model.accumulators[name], learning_rate
        )
