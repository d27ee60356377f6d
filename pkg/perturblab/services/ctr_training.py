"""
Minibatch Adagrad trainers for the CTR model: baseline, SCR and LSPR.

Every trainer draws from three independent streams derived from cfg.seed:
"shuffle" orders the batches, "perturb" feeds the augmentation, and the
model is initialised from "init" by build_model. A regularized trainer at
λ=0 therefore walks exactly the baseline's parameter trajectory.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from perturblab.core.errors import ContractViolation, TrainingDivergedError, UndefinedBaseRateError
from perturblab.schemas.experiment import DatasetConfig, ScrTarget, TrainConfig, TrainMethod
from perturblab.services.augment import Example, perturb_batch
from perturblab.services.ctr_model import (
    CtrModel,
    FeatureBatch,
    ForwardCache,
    Params,
    apply_gradients,
    backward,
    bce_logit_gradient,
    combine,
    encode_batch,
    forward_batch,
    init_model,
)
from perturblab.services.losses import (
    HiddenPair,
    PredictionBatch,
    bce,
    lspr_loss,
    mse,
    normalized_entropy,
)
from perturblab.services.numerics import Rng, derive_seed
from perturblab.services.registry import MethodRegistry

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_ne: Optional[float]
    eval_ne: Optional[float] = None


@dataclass
class TrainResult:
    model: CtrModel
    history: List[EpochRecord] = field(default_factory=list)
    batch_losses: List[float] = field(default_factory=list)
    forward_passes: int = 0
    steps: int = 0

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.history[-1] if self.history else None


@dataclass(frozen=True)
class BatchOutcome:
    loss: float
    grads: Params
    forward_passes: int


Trainer = Callable[..., TrainResult]
trainers: MethodRegistry[Trainer] = MethodRegistry("trainer")


def build_model(dataset: DatasetConfig, cfg: TrainConfig) -> CtrModel:
    return init_model(
        dense_dim=dataset.dense_dim,
        n_embeddings=dataset.n_embeddings,
        embed_dim=dataset.embed_dim,
        n_sparse_slots=dataset.n_sparse_slots,
        vocab_size=dataset.vocab_size,
        sparse_embed_dim=cfg.sparse_embed_dim,
        hidden_dim=cfg.hidden_dim,
        rng=Rng(derive_seed(cfg.seed, "init")),
        init_scale=cfg.init_scale,
    )


def training_subset(data: Sequence[Example], train_fraction: float) -> List[Example]:
    """Leading fraction of the (already shuffled) training split, never empty."""
    if not data:
        raise ContractViolation("training data is empty")
    keep = max(1, int(math.ceil(len(data) * train_fraction - 1e-9)))
    return list(data[:keep])


def _checked_forward(model: CtrModel, features: FeatureBatch) -> ForwardCache:
    cache = forward_batch(model, features)
    if not np.isfinite(cache.logits.sum()):
        raise FloatingPointError("non-finite logits")
    return cache


def _supervised(model: CtrModel, examples: Sequence[Example]) -> Tuple[ForwardCache, PredictionBatch, Params]:
    batch = encode_batch(examples)
    cache = _checked_forward(model, batch)
    grads = backward(model, cache, bce_logit_gradient(cache, batch.labels))
    return cache, PredictionBatch(batch.labels, cache.predictions), grads


def baseline_batch(model: CtrModel, examples: Sequence[Example], cfg: TrainConfig, rng: Rng) -> BatchOutcome:
    _, clean, grads = _supervised(model, examples)
    return BatchOutcome(loss=bce(clean), grads=grads, forward_passes=len(examples))


def scr_regularizer(
    model: CtrModel, clean: ForwardCache, rows: np.ndarray, perturbed: Sequence[Example], target: ScrTarget
) -> Tuple[float, Params]:
    """
    MSE between clean and perturbed representations of the selected rows and
    its gradient. The clean side is a constant target.
    """
    cache = _checked_forward(model, encode_batch(perturbed))
    k, width = cache.hidden.shape
    d_logits = np.zeros(k)
    d_hidden = None
    value = 0.0
    if target in (ScrTarget.LOGIT, ScrTarget.BOTH):
        value += mse(HiddenPair(clean.logits[rows], cache.logits))
        d_logits = 2.0 * (cache.logits - clean.logits[rows]) / k
    if target in (ScrTarget.HIDDEN, ScrTarget.BOTH):
        value += mse(HiddenPair(clean.hidden[rows], cache.hidden))
        d_hidden = 2.0 * (cache.hidden - clean.hidden[rows]) / (k * width)
    return value, backward(model, cache, d_logits, d_hidden)


def scr_batch(model: CtrModel, examples: Sequence[Example], cfg: TrainConfig, rng: Rng) -> BatchOutcome:
    clean_cache, clean, grads = _supervised(model, examples)
    n_perturbed = max(1, int(math.ceil(cfg.scr_perturb_fraction * len(examples) - 1e-9)))
    rows = np.sort(rng.permutation(len(examples))[:n_perturbed])
    perturbed = perturb_batch([examples[i] for i in rows], cfg.perturbation, rng, cfg.group_specs)

    reg_value, reg_grads = scr_regularizer(model, clean_cache, rows, perturbed, cfg.scr_target)
    return BatchOutcome(
        loss=bce(clean) + cfg.lam * reg_value,
        grads=combine(grads, reg_grads, cfg.lam),
        forward_passes=len(examples) + n_perturbed,
    )


def lspr_batch(model: CtrModel, examples: Sequence[Example], cfg: TrainConfig, rng: Rng) -> BatchOutcome:
    _, clean, grads = _supervised(model, examples)
    perturbed = perturb_batch(examples, cfg.perturbation, rng, cfg.group_specs)
    assert all(p.label == ex.label for p, ex in zip(perturbed, examples))
    _, noisy, noisy_grads = _supervised(model, perturbed)
    return BatchOutcome(
        loss=lspr_loss(clean, noisy, cfg.lam),
        grads=combine(grads, noisy_grads, cfg.lam),
        forward_passes=2 * len(examples),
    )


BatchStep = Callable[[CtrModel, Sequence[Example], TrainConfig, Rng], BatchOutcome]


def _train_ne(model: CtrModel, train_set: Sequence[Example]) -> Optional[float]:
    """NE on the training subset; None when the subset holds a single class."""
    try:
        return evaluate(model, train_set)[0]
    except UndefinedBaseRateError:
        return None


def _check_method(cfg: TrainConfig, expected: TrainMethod) -> None:
    if cfg.method != expected:
        raise ContractViolation(f"trainer for {expected.value} got cfg.method={cfg.method.value}")


def _fit(
    model: CtrModel,
    data: Sequence[Example],
    cfg: TrainConfig,
    eval_data: Optional[Sequence[Example]],
    batch_step: BatchStep,
) -> TrainResult:
    model = model.copy()
    train_set = training_subset(data, cfg.train_fraction)
    shuffle_rng = Rng(derive_seed(cfg.seed, "shuffle"))
    perturb_rng = Rng(derive_seed(cfg.seed, "perturb"))
    result = TrainResult(model=model)

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(len(train_set))
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
                try:
                    outcome = batch_step(model, batch, cfg, perturb_rng)
                except FloatingPointError as e:
                    logger.warning("%s diverged in epoch %d: %s", cfg.method.value, epoch, e)
                    raise TrainingDivergedError(epoch, result) from e
                apply_gradients(model, outcome.grads, cfg.learning_rate)
                result.batch_losses.append(outcome.loss)
                result.forward_passes += outcome.forward_passes
                result.steps += 1
                if not model.is_finite():
                    logger.warning("%s diverged in epoch %d", cfg.method.value, epoch)
                    raise TrainingDivergedError(epoch, result)

            try:
                train_ne = _train_ne(model, train_set)
                eval_ne = evaluate(model, eval_data)[0] if eval_data else None
            except FloatingPointError as e:
                raise TrainingDivergedError(epoch, result) from e
            result.history.append(EpochRecord(epoch=epoch, train_ne=train_ne, eval_ne=eval_ne))
            logger.debug(
                "%s λ=%s epoch %d train NE %s eval NE %s",
                cfg.method.value, cfg.lam, epoch, train_ne, eval_ne,
            )
    return result


@trainers.register(TrainMethod.BASELINE, description="supervised BCE only")
def train_baseline(
    model: CtrModel, data: Sequence[Example], cfg: TrainConfig, eval_data: Optional[Sequence[Example]] = None
) -> TrainResult:
    _check_method(cfg, TrainMethod.BASELINE)
    return _fit(model, data, cfg, eval_data, baseline_batch)


@trainers.register(TrainMethod.SCR, description="BCE + λ·MSE to the clean representation")
def train_scr(
    model: CtrModel, data: Sequence[Example], cfg: TrainConfig, eval_data: Optional[Sequence[Example]] = None
) -> TrainResult:
    _check_method(cfg, TrainMethod.SCR)
    return _fit(model, data, cfg, eval_data, scr_batch)


@trainers.register(TrainMethod.LSPR, description="BCE on clean + λ·BCE on perturbed copies")
def train_lspr(
    model: CtrModel, data: Sequence[Example], cfg: TrainConfig, eval_data: Optional[Sequence[Example]] = None
) -> TrainResult:
    _check_method(cfg, TrainMethod.LSPR)
    return _fit(model, data, cfg, eval_data, lspr_batch)


def train(
    model: CtrModel, data: Sequence[Example], cfg: TrainConfig, eval_data: Optional[Sequence[Example]] = None
) -> TrainResult:
    return trainers.get(cfg.method)(model, data, cfg, eval_data)


def evaluate(model: CtrModel, data: Sequence[Example]) -> Tuple[float, float]:
    """(NE, BCE) on data. Reads the model only."""
    features = encode_batch(data)
    cache = _checked_forward(model, features)
    batch = PredictionBatch(features.labels, cache.predictions)
    return normalized_entropy(batch), bce(batch)
