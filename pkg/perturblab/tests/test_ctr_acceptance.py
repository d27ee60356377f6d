"""
Held-out NE direction check on default synthetic CTR data (10 replicas, label noise 0.1).
Run with: pytest -m slow
"""
import json
import statistics

import pytest

from perturblab.schemas.experiment import DatasetConfig, TrainConfig, TrainMethod
from perturblab.schemas.report import CellStatus
from perturblab.services.ctr_dataset import generate_dataset, split_dataset
from perturblab.services.ctr_training import build_model, train_baseline
from perturblab.services.experiment import parse_spec, run_experiment
from perturblab.services.ne_report import format_gain_table


def acceptance_spec(base_seed: int) -> str:
    # шум соизмерим с признаками N(0, 1), λ=1: зашумлённые копии весят как чистые
    return json.dumps(
        {
            "mode": "ctr",
            "base_seed": base_seed,
            "replicas": 10,
            "ctr": {
                "methods": ["baseline", "LSPR"],
                "lambdas": [1.0],
                "perturbations": [{"noise_scale": 0.5}],
                "dataset": {"label_noise": 0.1},
            },
        }
    )


@pytest.mark.slow
@pytest.mark.parametrize("base_seed", [2024, 7, 31])
def test_lspr_does_not_lose_to_baseline(tmp_path, base_seed):
    report = run_experiment(parse_spec(acceptance_spec(base_seed)), tmp_path, jobs=4)
    assert report.count(CellStatus.COMPLETED) == 20

    def mean_ne(method):
        return statistics.mean(c.final_eval_ne for c in report.ctr_cells if c.method == method)

    assert mean_ne(TrainMethod.LSPR) <= mean_ne(TrainMethod.BASELINE)

    lines = format_gain_table(report.ctr_summary).splitlines()
    assert lines[2] == "| Baseline | 0 % |"
    lspr = [r for r in report.ctr_summary if r.method == TrainMethod.LSPR][0]
    assert lspr.relative_gain >= 0.0
    assert lspr.seed_count == 10


@pytest.mark.slow
def test_default_baseline_overfits():
    train_set, eval_set = split_dataset(generate_dataset(DatasetConfig()), 0.2, seed=0)
    cfg = TrainConfig()
    history = train_baseline(build_model(DatasetConfig(), cfg), train_set, cfg, eval_set).history
    assert history[-1].train_ne < history[-1].eval_ne
