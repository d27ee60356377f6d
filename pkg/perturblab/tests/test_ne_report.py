import statistics

import pytest

from perturblab.schemas.experiment import PerturbationSpec, TrainMethod
from perturblab.schemas.report import CellStatus, CtrCellResult
from perturblab.services.ne_report import format_gain_table, summarize_ctr_cells

SPEC = PerturbationSpec(noise_scale=0.1)


def cell(method, replica, eval_ne, lam=0.0, fraction=1.0, status=CellStatus.COMPLETED, perturbation=SPEC):
    return CtrCellResult(
        cell_id=f"{method.value}-{lam}-{fraction}-{replica}",
        index=0,
        method=method,
        lam=lam,
        perturbation=PerturbationSpec.zero() if method == TrainMethod.BASELINE else perturbation,
        train_fraction=fraction,
        replica=replica,
        seed=replica,
        status=status,
        final_eval_ne=eval_ne if status == CellStatus.COMPLETED else None,
    )


def test_gains_are_relative_to_the_baseline_mean():
    cells = [
        cell(TrainMethod.BASELINE, 0, 0.80),
        cell(TrainMethod.BASELINE, 1, 0.82),
        cell(TrainMethod.LSPR, 0, 0.78, lam=0.1),
        cell(TrainMethod.LSPR, 1, 0.81, lam=0.1),
        cell(TrainMethod.SCR, 0, 0.80, lam=0.1),
        cell(TrainMethod.SCR, 1, 0.83, lam=0.1),
    ]
    rows = {r.method: r for r in summarize_ctr_cells(cells)}

    assert rows[TrainMethod.BASELINE].relative_gain == 0.0
    base = (0.80 + 0.82) / 2
    assert rows[TrainMethod.LSPR].relative_gain == pytest.approx((base - 0.795) / base, abs=1e-12)
    paired = [(0.80 - 0.78) / 0.80, (0.82 - 0.81) / 0.82]
    assert rows[TrainMethod.LSPR].gain_std == pytest.approx(statistics.stdev(paired), abs=1e-12)
    assert rows[TrainMethod.LSPR].seed_count == 2
    assert rows[TrainMethod.LSPR].is_best
    assert not rows[TrainMethod.SCR].is_best
    assert not rows[TrainMethod.BASELINE].is_best


def test_each_fraction_has_its_own_baseline():
    cells = [
        cell(TrainMethod.BASELINE, 0, 0.9, fraction=0.1),
        cell(TrainMethod.BASELINE, 0, 0.8, fraction=1.0),
        cell(TrainMethod.LSPR, 0, 0.81, lam=0.01, fraction=0.1),
        cell(TrainMethod.LSPR, 0, 0.84, lam=0.01, fraction=1.0),
    ]
    rows = summarize_ctr_cells(cells)
    gains = {r.train_fraction: r.relative_gain for r in rows if r.method == TrainMethod.LSPR}
    assert gains[0.1] == pytest.approx(0.1, abs=1e-12)
    assert gains[1.0] == pytest.approx(-0.05, abs=1e-12)
    best = {r.train_fraction: r.method for r in rows if r.is_best}
    assert best == {0.1: TrainMethod.LSPR, 1.0: TrainMethod.BASELINE}


def test_diverged_cells_are_counted_not_averaged():
    cells = [
        cell(TrainMethod.BASELINE, 0, 0.8),
        cell(TrainMethod.BASELINE, 1, 0.8),
        cell(TrainMethod.SCR, 0, 0.76, lam=1.0),
        cell(TrainMethod.SCR, 1, None, lam=1.0, status=CellStatus.DIVERGED),
    ]
    scr = [r for r in summarize_ctr_cells(cells) if r.method == TrainMethod.SCR][0]
    assert scr.diverged_count == 1
    assert scr.seed_count == 1
    assert scr.mean_eval_ne == 0.76
    assert scr.gain_std == 0.0


def test_missing_baseline_leaves_gain_empty():
    cells = [
        cell(TrainMethod.BASELINE, 0, None, status=CellStatus.FAILED),
        cell(TrainMethod.LSPR, 0, 0.7, lam=0.1),
    ]
    lspr = [r for r in summarize_ctr_cells(cells) if r.method == TrainMethod.LSPR][0]
    assert lspr.relative_gain is None
    assert lspr.gain_std is None
    assert "n/a" in format_gain_table(summarize_ctr_cells(cells))


def test_gain_table_layout():
    cells = [
        cell(TrainMethod.BASELINE, 0, 1.0, fraction=0.1),
        cell(TrainMethod.BASELINE, 0, 1.0, fraction=1.0),
        cell(TrainMethod.LSPR, 0, 0.999, lam=0.001, fraction=0.1),
        cell(TrainMethod.LSPR, 0, 1.002, lam=0.001, fraction=1.0),
    ]
    lines = format_gain_table(summarize_ctr_cells(cells)).splitlines()
    assert lines[0] == "| Method | 10% of data | 100% of data |"
    assert lines[1] == "| --- | --- | --- |"
    assert lines[2] == "| Baseline | 0 % | 0 % |"
    assert lines[3] == "| LSPR λ=0.001 | 0.1 % * | -0.2 % |"


def test_several_perturbations_get_labelled():
    other = PerturbationSpec(noise_scale=0.9, dropout_rate=0.0)
    cells = [
        cell(TrainMethod.BASELINE, 0, 1.0),
        cell(TrainMethod.LSPR, 0, 0.9, lam=0.1),
        cell(TrainMethod.LSPR, 0, 0.95, lam=0.1, perturbation=other),
    ]
    table = format_gain_table(summarize_ctr_cells(cells))
    assert "LSPR λ=0.1 ω=0.1 σ=1 p=0.1" in table
    assert "LSPR λ=0.1 ω=0.9 σ=1 p=0" in table
