"""
Plot emission for lindyn reports: alignment γ and weight-space error ε
against the step, one line per grid cell.

The data CSV is the authoritative artifact; the SVG is a rendering of it.
"""
import logging
from pathlib import Path
from typing import List, Literal, Tuple

import matplotlib
from matplotlib.figure import Figure

from perturblab.core.errors import ContractViolation
from perturblab.schemas.experiment import ExperimentMode
from perturblab.schemas.report import LindynCellResult, RunReport
from perturblab.services.experiment import write_csv

logger = logging.getLogger(__name__)

Panel = Literal["gamma", "epsilon"]

PANEL_TITLES = {
    "gamma": "Alignment with W* (γ)",
    "epsilon": "Error in weight space (ε)",
}

# Fixed id salt keeps the SVG bytes stable across runs
matplotlib.rcParams["svg.hashsalt"] = "perturblab"


def series_label(cell: LindynCellResult, with_replica: bool) -> str:
    label = cell.label
    return f"{label} r{cell.replica}" if with_replica else label


def plot_series(report: RunReport, panel: Panel) -> List[Tuple[str, List[int], List[float]]]:
    if panel not in PANEL_TITLES:
        raise ContractViolation(f"unknown panel '{panel}', expected gamma or epsilon")
    if report.mode != ExperimentMode.LINDYN:
        raise ContractViolation("plots need a lindyn report")
    cells = [c for c in report.lindyn_cells if c.records]
    if not cells:
        raise ContractViolation("report contains no trajectories to plot")
    with_replica = report.replicas > 1
    return [
        (
            series_label(cell, with_replica),
            [r.step for r in cell.records],
            [getattr(r, panel) for r in cell.records],
        )
        for cell in cells
    ]


def emit_plot(report: RunReport, panel: Panel, out_dir: Path) -> Tuple[Path, Path]:
    """Write {panel}.svg and plot_{panel}.csv (series,step,value) into out_dir."""
    series = plot_series(report, panel)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / f"plot_{panel}.csv"
    write_csv(
        csv_path,
        ("series", "step", "value"),
        [(label, step, value) for label, steps, values in series for step, value in zip(steps, values)],
    )

    fig = Figure(figsize=(7, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    for label, steps, values in series:
        ax.plot(steps, values, label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("γ" if panel == "gamma" else "ε")
    if panel == "epsilon":
        ax.set_yscale("log")
    ax.set_title(PANEL_TITLES[panel])
    ax.legend(fontsize="small")
    fig.tight_layout()

    svg_path = out_dir / f"{panel}.svg"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    logger.info("wrote %s and %s (%d series)", svg_path, csv_path, len(series))
    return svg_path, csv_path
