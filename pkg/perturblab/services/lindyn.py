"""
Learning dynamics of a two-layer linear student trained online on a linear teacher.

The teacher maps x to y = W* x; the student predicts W2 W1 x and is trained
with single-sample SGD on ½‖y - ŷ‖², optionally with one of two perturbation
regularizers:

- LSPR adds λ·½‖y - W2W1(ωσz + x)‖², the perturbed input keeps the true label.
- SCR adds λ·½‖W2W1(ωσz + x) - c‖², where c = W2W1x is a frozen target.

Both weight deltas of a step are computed from the pre-step weights.
Progress is tracked with ε (mean squared entry of W2W1 - W*) and γ (Frobenius
cosine between W2W1 and W*).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from perturblab.core.errors import ContractViolation, DegenerateInputError, TrajectoryDivergedError
from perturblab.schemas.experiment import DynConfig, DynMethod
from perturblab.services.numerics import (
    Matrix,
    Rng,
    Vector,
    derive_seed,
    frobenius_inner,
    frobenius_norm,
    matmul,
    matvec,
    outer,
    sample_gaussian,
)
from perturblab.services.registry import MethodRegistry

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DynState:
    w_star: Matrix
    w1: Matrix
    w2: Matrix
    step: int = 0

    def __post_init__(self):
        l_y, l_x = self.w_star.shape
        if self.w1.shape[1] != l_x or self.w2.shape[0] != l_y or self.w2.shape[1] != self.w1.shape[0]:
            raise ContractViolation(
                f"incompatible shapes: W*={self.w_star.shape}, W1={self.w1.shape}, W2={self.w2.shape}"
            )

    @property
    def product(self) -> Matrix:
        return matmul(self.w2, self.w1)

    @property
    def input_dim(self) -> int:
        return self.w_star.shape[1]


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    epsilon: float
    gamma: float


@dataclass
class Trajectory:
    config: DynConfig
    records: List[TrajectoryRecord] = field(default_factory=list)
    diverged_at: Optional[int] = None

    @property
    def final(self) -> TrajectoryRecord:
        return self.records[-1]

    def steps(self) -> List[int]:
        return [r.step for r in self.records]


UpdateRule = Callable[[DynState, Vector, Vector, Vector, DynConfig], DynState]
update_rules: MethodRegistry[UpdateRule] = MethodRegistry("update rule")


def init_state(config: DynConfig, rng: Rng) -> DynState:
    """W* ∼ N(0,1); W1, W2 ∼ N(0, init_scale²/fan_in)."""
    l_x, l_h, l_y = config.input_dim, config.hidden_dim, config.output_dim
    w_star = sample_gaussian(rng, l_y * l_x).reshape(l_y, l_x)
    w1 = sample_gaussian(rng, l_h * l_x, std=config.init_scale / math.sqrt(l_x)).reshape(l_h, l_x)
    w2 = sample_gaussian(rng, l_y * l_h, std=config.init_scale / math.sqrt(l_h)).reshape(l_y, l_h)
    return DynState(w_star=w_star, w1=w1, w2=w2, step=0)


def teacher_label(state: DynState, x: Vector) -> Vector:
    return matvec(state.w_star, x)


def _check_input(state: DynState, *vectors: Vector) -> None:
    for v in vectors:
        if v.ndim != 1 or v.shape[0] != state.input_dim:
            raise ContractViolation(f"expected input of dim {state.input_dim}, got shape {v.shape}")


def _check_label(state: DynState, y: Vector) -> None:
    if y.ndim != 1 or y.shape[0] != state.w_star.shape[0]:
        raise ContractViolation(f"expected label of dim {state.w_star.shape[0]}, got shape {y.shape}")


def _forward(state: DynState, x_in: Vector) -> Tuple[Vector, Vector]:
    hidden = matvec(state.w1, x_in)
    return hidden, matvec(state.w2, hidden)


def _gradients(
    state: DynState, x_in: Vector, hidden: Vector, residual: Vector
) -> Tuple[Matrix, Matrix]:
    """Gradients of ½‖residual‖² when residual = W2W1x_in - target and target is constant."""
    return outer(state.w2.T @ residual, x_in), outer(residual, hidden)


def _apply(state: DynState, eta: float, g1: Matrix, g2: Matrix) -> DynState:
    return replace(state, w1=state.w1 - eta * g1, w2=state.w2 - eta * g2, step=state.step + 1)


def _perturbed_input(x: Vector, z: Vector, omega: float, sigma: float) -> Vector:
    return omega * sigma * z + x


def sgd_step(state: DynState, x: Vector, y: Vector, eta: float) -> DynState:
    _check_input(state, x)
    _check_label(state, y)
    hidden, out = _forward(state, x)
    g1, g2 = _gradients(state, x, hidden, out - y)
    return _apply(state, eta, g1, g2)


def lspr_step(
    state: DynState, x: Vector, y: Vector, z: Vector,
    eta: float, lam: float, omega: float, sigma: float,
) -> DynState:
    _check_input(state, x, z)
    _check_label(state, y)
    hidden, out = _forward(state, x)
    g1, g2 = _gradients(state, x, hidden, out - y)

    x_pert = _perturbed_input(x, z, omega, sigma)
    hidden_pert, out_pert = _forward(state, x_pert)
    p1, p2 = _gradients(state, x_pert, hidden_pert, out_pert - y)
    return _apply(state, eta, g1 + lam * p1, g2 + lam * p2)


def scr_step(
    state: DynState, x: Vector, y: Vector, z: Vector,
    eta: float, lam: float, omega: float, sigma: float,
) -> DynState:
    _check_input(state, x, z)
    _check_label(state, y)
    hidden, clean_out = _forward(state, x)
    g1, g2 = _gradients(state, x, hidden, clean_out - y)

    x_pert = _perturbed_input(x, z, omega, sigma)
    hidden_pert, out_pert = _forward(state, x_pert)
    # clean_out is a constant target: no gradient flows through the clean branch
    p1, p2 = _gradients(state, x_pert, hidden_pert, out_pert - clean_out)
    return _apply(state, eta, g1 + lam * p1, g2 + lam * p2)


@update_rules.register(DynMethod.SGD, description="plain online SGD")
def _sgd_rule(state: DynState, x: Vector, y: Vector, z: Vector, config: DynConfig) -> DynState:
    return sgd_step(state, x, y, config.eta)


@update_rules.register(DynMethod.LSPR, description="loss-balanced small perturbation")
def _lspr_rule(state: DynState, x: Vector, y: Vector, z: Vector, config: DynConfig) -> DynState:
    return lspr_step(state, x, y, z, config.eta, config.lam, config.omega, config.sigma)


@update_rules.register(DynMethod.SCR, description="self-consistency with frozen clean target")
def _scr_rule(state: DynState, x: Vector, y: Vector, z: Vector, config: DynConfig) -> DynState:
    return scr_step(state, x, y, z, config.eta, config.lam, config.omega, config.sigma)


def epsilon(state: DynState) -> float:
    """(1/(L_x L_y))·trace(EᵀE) with E = W2W1 - W*."""
    error = state.product - state.w_star
    return float(np.mean(error * error))


def gamma(state: DynState) -> float:
    product = state.product
    norm_product = frobenius_norm(product)
    norm_star = frobenius_norm(state.w_star)
    if norm_product == 0.0 or norm_star == 0.0:
        raise DegenerateInputError("γ is undefined when W2W1 or W* is zero")
    cosine = frobenius_inner(product, state.w_star) / (norm_product * norm_star)
    return float(min(1.0, max(-1.0, cosine)))


def _record(state: DynState) -> TrajectoryRecord:
    return TrajectoryRecord(step=state.step, epsilon=epsilon(state), gamma=gamma(state))


def _weights_finite(state: DynState) -> bool:
    # Any inf/nan entry (or overflow) makes the sum non-finite
    return bool(np.isfinite(state.w1.sum()) and np.isfinite(state.w2.sum()))


def run_trajectory(config: DynConfig) -> Trajectory:
    """
    Simulate config.steps online updates and record (ε, γ).

    Fresh x and z are drawn every step for every method, so runs that share a
    seed see the same inputs. Raises TrajectoryDivergedError (with the partial
    trajectory attached) as soon as any weight becomes non-finite.
    """
    rule = update_rules.get(config.method)
    init_rng = Rng(derive_seed(config.seed, "init"))
    data_rng = Rng(derive_seed(config.seed, "data"))
    input_std = config.resolved_input_std

    state = init_state(config, init_rng)
    trajectory = Trajectory(config=config, records=[_record(state)])

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, config.steps + 1):
            x = sample_gaussian(data_rng, config.input_dim, std=input_std)
            z = sample_gaussian(data_rng, config.input_dim)
            y = teacher_label(state, x)
            state = rule(state, x, y, z, config)

            if not _weights_finite(state):
                trajectory.diverged_at = t
                logger.warning(
                    "%s ω=%s λ=%s η=%s diverged at step %d",
                    config.method.value, config.omega, config.lam, config.eta, t,
                )
                raise TrajectoryDivergedError(t, trajectory)

            if t % config.record_every == 0 or t == config.steps:
                trajectory.records.append(_record(state))
                logger.debug(
                    "step %d ε=%.6g γ=%.6g", t, trajectory.final.epsilon, trajectory.final.gamma
                )

    return trajectory
