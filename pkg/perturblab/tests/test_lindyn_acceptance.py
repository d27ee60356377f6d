"""
Desk-scale learning-dynamics checks (L_x=100, L_h=1000, L_y=10, 20k steps, 5 seeds).
Run with: pytest -m slow
"""
import math
import statistics

import pytest

from perturblab.core.errors import TrajectoryDivergedError
from perturblab.schemas.experiment import DynConfig, DynMethod
from perturblab.services.lindyn import run_trajectory
from perturblab.services.numerics import derive_seed

SEEDS = [derive_seed(2024, "acceptance", i) for i in range(5)]


def final_metrics(method: DynMethod, omega: float, lam: float, seed: int):
    config = DynConfig(
        input_dim=100,
        hidden_dim=1000,
        output_dim=10,
        eta=1.4,
        omega=omega,
        lam=lam,
        sigma=1.0,
        steps=20_000,
        record_every=20_000,
        method=method,
        seed=seed,
    )
    try:
        final = run_trajectory(config).final
    except TrajectoryDivergedError:
        # a diverged run is worse than any finished one
        return math.inf, -1.0
    return final.epsilon, final.gamma


def mean_metrics(method: DynMethod, omega: float, lam: float):
    results = [final_metrics(method, omega, lam, seed) for seed in SEEDS]
    return statistics.mean(r[0] for r in results), statistics.mean(r[1] for r in results)


@pytest.mark.slow
def test_lspr_aligns_better_than_scr_with_small_perturbations():
    eps_lspr, gamma_lspr = mean_metrics(DynMethod.LSPR, 0.1, 0.001)
    eps_scr, gamma_scr = mean_metrics(DynMethod.SCR, 0.1, 0.001)
    eps_sgd, gamma_sgd = mean_metrics(DynMethod.SGD, 0.1, 0.001)

    assert math.isfinite(eps_sgd) and gamma_sgd > 0.9
    assert gamma_lspr >= gamma_scr
    assert eps_lspr <= eps_scr


@pytest.mark.slow
@pytest.mark.parametrize("method", [DynMethod.SCR, DynMethod.LSPR])
def test_large_perturbations_degrade_both_methods(method):
    eps_small, gamma_small = mean_metrics(method, 0.1, 0.001)
    eps_large, gamma_large = mean_metrics(method, 0.9, 1.0)
    assert eps_large > eps_small
    assert gamma_large < gamma_small
