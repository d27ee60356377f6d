from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DynMethod(str, Enum):
    SGD = "SGD"
    SCR = "SCR"
    LSPR = "LSPR"


class TrainMethod(str, Enum):
    BASELINE = "baseline"
    SCR = "SCR"
    LSPR = "LSPR"


class ScrTarget(str, Enum):
    LOGIT = "logit"
    HIDDEN = "hidden"
    BOTH = "both"


class ExperimentMode(str, Enum):
    LINDYN = "lindyn"
    CTR = "ctr"


class PerturbationSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    noise_scale: float = Field(0.1, ge=0.0, description="ω, weight applied to the sampled noise")
    noise_std: float = Field(1.0, ge=0.0, description="σ of ψ∼N(μ,σ)")
    noise_mean: float = Field(0.0, description="μ of ψ∼N(μ,σ)")
    dropout_rate: float = Field(0.1, ge=0.0, le=1.0, description="Sparse slot dropout probability")

    @classmethod
    def zero(cls) -> "PerturbationSpec":
        return cls(noise_scale=0.0, noise_std=0.0, noise_mean=0.0, dropout_rate=0.0)


class FeatureGroupSpecs(BaseModel):
    """Optional per-group overrides; a missing group falls back to the shared spec."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dense: Optional[PerturbationSpec] = None
    embeddings: Optional[PerturbationSpec] = None
    sparse: Optional[PerturbationSpec] = None


class DynConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_dim: int = Field(100, ge=1, description="L_x")
    hidden_dim: int = Field(10_000, ge=1, description="L_h")
    output_dim: int = Field(10, ge=1, description="L_y")
    eta: float = Field(1.4, gt=0.0, description="Learning rate η")
    lam: float = Field(0.001, ge=0.0, description="Loss weight λ")
    omega: float = Field(0.1, ge=0.0, description="Perturbation weight ω")
    sigma: float = Field(1.0, ge=0.0, description="Noise std σ inside ωσz")
    steps: int = Field(100_000, ge=0)
    method: DynMethod = DynMethod.LSPR
    seed: int = Field(0, ge=0, lt=2**64)
    record_every: int = Field(100, ge=1)
    input_std: Optional[float] = Field(
        None, gt=0.0, description="Std of the input entries; defaults to 1/L_x"
    )
    init_scale: float = Field(1.0, gt=0.0, description="Multiplier on the N(0, 1/fan_in) student init")

    @property
    def resolved_input_std(self) -> float:
        return self.input_std if self.input_std is not None else 1.0 / self.input_dim


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_examples: int = Field(1000, ge=1)
    dense_dim: int = Field(8, ge=1)
    n_embeddings: int = Field(2, ge=1)
    embed_dim: int = Field(4, ge=1)
    n_sparse_slots: int = Field(4, ge=1)
    vocab_size: int = Field(10, ge=1, description="Values per sparse slot")
    label_noise: float = Field(0.1, ge=0.0, lt=0.5, description="Label flip probability")
    base_rate: float = Field(0.25, ge=0.05, le=0.5, description="Teacher positive rate before flips")
    teacher_scale: float = Field(3.0, gt=0.0, description="Teacher logit sharpness")
    missing_rate: float = Field(0.0, ge=0.0, lt=1.0, description="Probability a slot is absent")
    seed: int = Field(0, ge=0, lt=2**64)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: TrainMethod = TrainMethod.BASELINE
    lam: float = Field(0.0, ge=0.0)
    perturbation: PerturbationSpec = Field(default_factory=PerturbationSpec)
    group_specs: Optional[FeatureGroupSpecs] = None
    scr_target: ScrTarget = ScrTarget.BOTH
    scr_perturb_fraction: float = Field(0.25, gt=0.0, le=1.0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(30, ge=0)
    learning_rate: float = Field(0.1, ge=0.0)
    hidden_dim: int = Field(32, ge=1, description="Width of the interaction layer")
    sparse_embed_dim: int = Field(4, ge=1)
    init_scale: float = Field(0.5, ge=0.0)
    train_fraction: float = Field(1.0, gt=0.0, le=1.0)
    seed: int = Field(0, ge=0, lt=2**64)


class LindynGrid(BaseModel):
    model_config = ConfigDict(extra="forbid")

    methods: List[DynMethod] = Field(
        default_factory=lambda: [DynMethod.SCR, DynMethod.LSPR], min_length=1
    )
    omegas: List[float] = Field(default_factory=lambda: [0.1, 0.9], min_length=1)
    lambdas: List[float] = Field(default_factory=lambda: [0.001, 1.0], min_length=1)
    etas: List[float] = Field(default_factory=lambda: [1.4], min_length=1)
    sigmas: List[float] = Field(default_factory=lambda: [1.0], min_length=1)

    input_dim: int = Field(100, ge=1)
    hidden_dim: int = Field(10_000, ge=1)
    output_dim: int = Field(10, ge=1)
    steps: int = Field(100_000, ge=0)
    record_every: int = Field(100, ge=1)
    input_std: Optional[float] = Field(None, gt=0.0)
    init_scale: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def check_ranges(self) -> "LindynGrid":
        for name in ("omegas", "lambdas", "sigmas"):
            if any(v < 0 for v in getattr(self, name)):
                raise ValueError(f"{name} must be non-negative")
        if any(v <= 0 for v in self.etas):
            raise ValueError("etas must be positive")
        return self


class CtrTrainingDefaults(BaseModel):
    """TrainConfig fields shared by every cell of a CTR grid."""

    model_config = ConfigDict(extra="forbid")

    scr_target: ScrTarget = ScrTarget.BOTH
    scr_perturb_fraction: float = Field(0.25, gt=0.0, le=1.0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(30, ge=0)
    learning_rate: float = Field(0.1, ge=0.0)
    hidden_dim: int = Field(32, ge=1)
    sparse_embed_dim: int = Field(4, ge=1)
    init_scale: float = Field(0.5, ge=0.0)
    group_specs: Optional[FeatureGroupSpecs] = None


class CtrGrid(BaseModel):
    model_config = ConfigDict(extra="forbid")

    methods: List[TrainMethod] = Field(
        default_factory=lambda: [TrainMethod.BASELINE, TrainMethod.SCR, TrainMethod.LSPR],
        min_length=1,
    )
    lambdas: List[float] = Field(default_factory=lambda: [0.001, 0.01, 0.1], min_length=1)
    perturbations: List[PerturbationSpec] = Field(
        default_factory=lambda: [PerturbationSpec()], min_length=1
    )
    train_fractions: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    eval_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    train: CtrTrainingDefaults = Field(default_factory=CtrTrainingDefaults)

    @model_validator(mode="after")
    def check_grid(self) -> "CtrGrid":
        if TrainMethod.BASELINE not in self.methods:
            raise ValueError("methods must include 'baseline' (relative gains are taken against it)")
        if any(v < 0 for v in self.lambdas):
            raise ValueError("lambdas must be non-negative")
        if any(not 0 < f <= 1 for f in self.train_fractions):
            raise ValueError("train_fractions must lie in (0, 1]")
        return self


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: ExperimentMode
    output_dir: Optional[str] = None
    base_seed: int = Field(0, ge=0, lt=2**64)
    replicas: int = Field(1, ge=1)
    lindyn: Optional[LindynGrid] = None
    ctr: Optional[CtrGrid] = None

    @model_validator(mode="before")
    @classmethod
    def fill_default_grid(cls, data: Any) -> Any:
        if isinstance(data, dict):
            mode = data.get("mode")
            mode = mode.value if isinstance(mode, ExperimentMode) else mode
            if mode in ("lindyn", "ctr") and data.get(mode) is None:
                data = {**data, mode: {}}
        return data

    @model_validator(mode="after")
    def check_blocks(self) -> "ExperimentSpec":
        other = "ctr" if self.mode == ExperimentMode.LINDYN else "lindyn"
        if getattr(self, other) is not None:
            raise ValueError(f"'{other}' grid is not allowed in {self.mode.value} mode")
        return self

    @property
    def grid(self) -> LindynGrid | CtrGrid:
        grid = self.lindyn if self.mode == ExperimentMode.LINDYN else self.ctr
        assert grid is not None
        return grid

    def cell_count(self) -> int:
        if self.mode == ExperimentMode.LINDYN:
            g = self.lindyn
            assert g is not None
            per_replica = len(g.methods) * len(g.omegas) * len(g.lambdas) * len(g.etas) * len(g.sigmas)
        else:
            g2 = self.ctr
            assert g2 is not None
            treated = sum(1 for m in g2.methods if m != TrainMethod.BASELINE)
            per_fraction = 1 + treated * len(g2.lambdas) * len(g2.perturbations)
            per_replica = per_fraction * len(g2.train_fractions)
        return per_replica * self.replicas

    def describe(self) -> Dict[str, Any]:
        return {"mode": self.mode.value, "cells": self.cell_count(), "replicas": self.replicas}
