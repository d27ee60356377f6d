"""
Supervised, consistency and perturbed-loss objectives plus NE reporting.

All logarithms are natural. Predictions are clipped to [1e-7, 1 - 1e-7]
before any log.
"""
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from perturblab.core.errors import ContractViolation, UndefinedBaseRateError

PREDICTION_CLIP = 1e-7


@dataclass(frozen=True)
class PredictionBatch:
    labels: npt.NDArray[np.float64]
    predictions: npt.NDArray[np.float64]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64)
        predictions = np.asarray(self.predictions, dtype=np.float64)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "predictions", predictions)
        if labels.ndim != 1 or labels.size == 0:
            raise ContractViolation("a prediction batch needs at least one example")
        if predictions.shape != labels.shape:
            raise ContractViolation(
                f"labels and predictions differ in length: {labels.size} vs {predictions.size}"
            )
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise ContractViolation("labels must be 0 or 1")
        if not np.all(np.isfinite(predictions)) or np.any((predictions < 0) | (predictions > 1)):
            raise ContractViolation("predictions must be probabilities in [0, 1]")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def clipped(self) -> npt.NDArray[np.float64]:
        return np.clip(self.predictions, PREDICTION_CLIP, 1.0 - PREDICTION_CLIP)

    @property
    def base_rate(self) -> float:
        return float(np.mean(self.labels))


@dataclass(frozen=True)
class HiddenPair:
    """Clean and perturbed representation; any equal-shaped arrays (logits, hidden rows)."""

    clean: npt.NDArray[np.float64]
    perturbed: npt.NDArray[np.float64]

    def __post_init__(self):
        clean = np.asarray(self.clean, dtype=np.float64)
        perturbed = np.asarray(self.perturbed, dtype=np.float64)
        object.__setattr__(self, "clean", clean)
        object.__setattr__(self, "perturbed", perturbed)
        if clean.shape != perturbed.shape:
            raise ContractViolation(f"representation shapes differ: {clean.shape} vs {perturbed.shape}")
        if clean.size == 0:
            raise ContractViolation("empty representation pair")


def bce(batch: PredictionBatch) -> float:
    p = batch.clipped
    y = batch.labels
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def mse(pair: HiddenPair) -> float:
    diff = pair.clean - pair.perturbed
    return float(np.mean(diff * diff))


def scr_loss(batch: PredictionBatch, pair: HiddenPair, lam: float) -> float:
    if lam < 0:
        raise ContractViolation(f"λ must be non-negative, got {lam}")
    return bce(batch) + lam * mse(pair)


def lspr_loss(clean: PredictionBatch, perturbed: PredictionBatch, lam: float) -> float:
    if lam < 0:
        raise ContractViolation(f"λ must be non-negative, got {lam}")
    if not np.array_equal(clean.labels, perturbed.labels):
        raise ContractViolation("perturbed batch must carry the clean batch's labels")
    return bce(clean) + lam * bce(perturbed)


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p))


def normalized_entropy(batch: PredictionBatch) -> float:
    """Log loss divided by the entropy of always predicting the base rate."""
    p_bar = batch.base_rate
    if p_bar <= 0.0 or p_bar >= 1.0:
        raise UndefinedBaseRateError(
            f"NE needs both classes, got base rate {p_bar} over {len(batch)} examples"
        )
    return bce(batch) / binary_entropy(p_bar)


def relative_ne_gain(ne_baseline: float, ne_treatment: float) -> float:
    """(baseline - treatment) / baseline; positive means the treatment is better."""
    if not ne_baseline > 0:
        raise ContractViolation(f"baseline NE must be positive, got {ne_baseline}")
    return (ne_baseline - ne_treatment) / ne_baseline


def format_gain(gain: float) -> str:
    """
    Render a relative gain the way the result tables do: '0 %', '0.1 %'.

    Only an exact zero prints as '0 %'; a nonzero gain below the printed
    precision shows as '<0.01 %' or '>-0.01 %'.
    """
    if gain == 0:
        return "0 %"
    percent = round(gain * 100.0, 2)
    if percent == 0:
        return "<0.01 %" if gain > 0 else ">-0.01 %"
    return f"{percent:g} %"
