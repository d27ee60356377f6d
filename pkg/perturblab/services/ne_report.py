"""
Relative NE reporting for CTR grids.
Every treatment is compared with the baseline trained on the same data fraction.
"""
import logging
import statistics
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

from perturblab.schemas.experiment import PerturbationSpec, TrainMethod
from perturblab.schemas.report import CellStatus, CtrCellResult, CtrSummaryRow
from perturblab.services.losses import format_gain, relative_ne_gain

logger = logging.getLogger(__name__)


def _usable(cell: CtrCellResult) -> bool:
    return cell.status == CellStatus.COMPLETED and cell.final_eval_ne is not None


def _spread(values: List[float]) -> Optional[float]:
    if not values:
        return None
    return statistics.stdev(values) if len(values) > 1 else 0.0


def summarize_ctr_cells(cells: Sequence[CtrCellResult]) -> List[CtrSummaryRow]:
    """One row per (method, λ, perturbation, fraction); the baseline row carries gain 0."""
    groups: "OrderedDict[tuple, List[CtrCellResult]]" = OrderedDict()
    for cell in cells:
        groups.setdefault(cell.config_key, []).append(cell)

    baselines: Dict[float, Dict[int, float]] = {}
    for key, members in groups.items():
        if key[0] == TrainMethod.BASELINE.value:
            baselines[key[3]] = {c.replica: c.final_eval_ne for c in members if _usable(c)}

    rows: List[CtrSummaryRow] = []
    for key, members in groups.items():
        method, lam, perturbation, fraction = key
        usable = [c for c in members if _usable(c)]
        mean_ne = statistics.mean(c.final_eval_ne for c in usable) if usable else None
        base = baselines.get(fraction, {})
        base_mean = statistics.mean(base.values()) if base else None

        gain: Optional[float] = None
        paired: List[float] = []
        if mean_ne is not None and base_mean is not None:
            gain = relative_ne_gain(base_mean, mean_ne)
            paired = [
                relative_ne_gain(base[c.replica], c.final_eval_ne)
                for c in usable
                if c.replica in base
            ]
        elif base_mean is None:
            logger.warning("no usable baseline at fraction %s, gains left empty", fraction)

        rows.append(
            CtrSummaryRow(
                method=TrainMethod(method),
                lam=lam,
                perturbation=perturbation,
                train_fraction=fraction,
                mean_eval_ne=mean_ne,
                relative_gain=gain,
                gain_std=_spread(paired),
                seed_count=len(usable),
                diverged_count=sum(1 for c in members if c.status == CellStatus.DIVERGED),
            )
        )

    # Лучшая конфигурация = минимальный средний NE на своей доле данных
    for fraction in {r.train_fraction for r in rows}:
        scored = [r for r in rows if r.train_fraction == fraction and r.mean_eval_ne is not None]
        if scored:
            min(scored, key=lambda r: r.mean_eval_ne).is_best = True
    return rows


def _perturbation_label(spec: PerturbationSpec) -> str:
    return f"ω={spec.noise_scale:g} σ={spec.noise_std:g} p={spec.dropout_rate:g}"


def row_label(row: CtrSummaryRow, with_perturbation: bool = False) -> str:
    label = row.label
    if with_perturbation and row.perturbation is not None:
        label = f"{label} {_perturbation_label(row.perturbation)}"
    return label


def format_gain_table(rows: Sequence[CtrSummaryRow]) -> str:
    """
    Markdown table of relative NE gains: one column per training fraction,
    one row per configuration, Baseline first at "0 %".
    """
    fractions = sorted({r.train_fraction for r in rows})
    perturbations = {r.perturbation for r in rows if r.perturbation is not None}
    with_perturbation = len(perturbations) > 1

    table: "OrderedDict[str, Dict[float, str]]" = OrderedDict()
    table["Baseline"] = {}
    for row in rows:
        label = row_label(row, with_perturbation)
        cell = "n/a" if row.relative_gain is None else format_gain(row.relative_gain)
        if row.is_best and row.method != TrainMethod.BASELINE:
            cell += " *"
        table.setdefault(label, {})[row.train_fraction] = cell

    header = ["Method"] + [f"{f * 100:g}% of data" for f in fractions]
    lines: List[Tuple[str, ...]] = [tuple(header), tuple("---" for _ in header)]
    for label, values in table.items():
        lines.append((label, *(values.get(f, "") for f in fractions)))
    return "\n".join("| " + " | ".join(line) + " |" for line in lines)
