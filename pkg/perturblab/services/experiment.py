"""
Experiment front-end: spec parsing, grid expansion, per-cell CSV output,
summary.json assembly and report reload.

Seeding pairs cells: a cell's streams are derived from the base seed, the
replica and the data-generating settings only. Method, λ and perturbation
never enter the seed key, so within a replica every method sees the same
teacher, initialization, inputs and noise.
"""
import asyncio
import csv
import itertools
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from perturblab.core.config import settings
from perturblab.core.errors import (
    OutputDirectoryError,
    SpecValidationError,
    TrainingDivergedError,
    TrajectoryDivergedError,
)
from perturblab.schemas.experiment import (
    CtrGrid,
    DynConfig,
    ExperimentMode,
    ExperimentSpec,
    LindynGrid,
    PerturbationSpec,
    TrainConfig,
    TrainMethod,
)
from perturblab.schemas.report import (
    CellStatus,
    CtrCellResult,
    EpochPoint,
    LindynCellResult,
    RunReport,
    TrajectoryPoint,
)
from perturblab.services.augment import Example
from perturblab.services.ctr_dataset import generate_dataset, split_dataset
from perturblab.services.ctr_training import TrainResult, build_model, evaluate, train
from perturblab.services.grid_runner import CellOutcome, CellTask, GridRunner, OutcomeStatus
from perturblab.services.lindyn import Trajectory, run_trajectory
from perturblab.services.metrics import RunMetrics
from perturblab.services.ne_report import summarize_ctr_cells
from perturblab.services.numerics import derive_seed

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.prom"
LINDYN_HEADER = ("step", "epsilon", "gamma")
CTR_HEADER = ("epoch", "train_ne", "eval_ne")


# ---------------------------------------------------------------------------
# Spec parsing
# ---------------------------------------------------------------------------


def _field_path(loc: Sequence[Any]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def parse_spec(text: str) -> ExperimentSpec:
    """Validate a JSON spec; unknown fields are rejected."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecValidationError("<root>", f"not valid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(data, dict):
        raise SpecValidationError("<root>", "spec must be a JSON object")
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise SpecValidationError(_field_path(first["loc"]), first["msg"]) from e


def serialize_spec(spec: ExperimentSpec) -> str:
    """JSON text that parses back to an equal spec; only explicitly set fields are written."""
    return spec.model_dump_json(exclude_unset=True, indent=2)


def load_spec(path: Path) -> ExperimentSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SpecValidationError("<file>", f"cannot read {path}: {e.strerror or e}") from e
    return parse_spec(text)


def apply_lindyn_overrides(
    spec: ExperimentSpec,
    hidden_dim: Optional[int] = None,
    steps: Optional[int] = None,
    full: bool = False,
) -> ExperimentSpec:
    """
    Desk scale unless full: grid dimensions the spec file left unset fall back to
    settings.DESK_HIDDEN_DIM / DESK_STEPS. Explicit values always win.
    """
    if spec.mode != ExperimentMode.LINDYN or spec.lindyn is None:
        return spec
    grid = spec.lindyn
    update: Dict[str, Any] = {}
    if not full:
        if "hidden_dim" not in grid.model_fields_set:
            update["hidden_dim"] = settings.DESK_HIDDEN_DIM
        if "steps" not in grid.model_fields_set:
            update["steps"] = settings.DESK_STEPS
    if hidden_dim is not None:
        update["hidden_dim"] = hidden_dim
    if steps is not None:
        update["steps"] = steps
    if not update:
        return spec
    data = grid.model_dump(exclude_unset=True, mode="json")
    data.update(update)
    try:
        new_grid = LindynGrid.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise SpecValidationError("lindyn." + _field_path(first["loc"]), first["msg"]) from e
    return spec.model_copy(update={"lindyn": new_grid})


def resolve_output_dir(spec: ExperimentSpec, cli_out: Optional[Path] = None) -> Path:
    """--out, then PERTURBLAB_OUTPUT_DIR, then the spec's output_dir, then runs/<mode>."""
    if cli_out is not None:
        return Path(cli_out)
    override = settings.output_dir_override
    if override is not None:
        return override
    if spec.output_dir:
        return Path(spec.output_dir)
    return Path("runs") / spec.mode.value


def _prepare_output_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputDirectoryError(path, e.strerror or str(e)) from e
    if not path.is_dir() or not os.access(path, os.W_OK):
        raise OutputDirectoryError(path, "not a writable directory")
    return path


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else format(float(value), ".17g")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (int, str)) else _fmt(v) for v in row])


def write_trajectory_csv(path: Path, trajectory: Trajectory) -> None:
    write_csv(path, LINDYN_HEADER, [(r.step, r.epsilon, r.gamma) for r in trajectory.records])


def write_history_csv(path: Path, result: TrainResult) -> None:
    write_csv(path, CTR_HEADER, [(h.epoch, h.train_ne, h.eval_ne) for h in result.history])


def _read_rows(path: Path) -> List[Dict[str, str]]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def read_trajectory_csv(path: Path) -> List[TrajectoryPoint]:
    return [
        TrajectoryPoint(step=int(r["step"]), epsilon=float(r["epsilon"]), gamma=float(r["gamma"]))
        for r in _read_rows(path)
    ]


def read_history_csv(path: Path) -> List[EpochPoint]:
    return [
        EpochPoint(
            epoch=int(r["epoch"]),
            train_ne=float(r["train_ne"]) if r["train_ne"] else None,
            eval_ne=float(r["eval_ne"]) if r["eval_ne"] else None,
        )
        for r in _read_rows(path)
    ]


# ---------------------------------------------------------------------------
# Grid expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LindynCell:
    index: int
    cell_id: str
    replica: int
    config: DynConfig


@dataclass(frozen=True)
class CtrCell:
    index: int
    cell_id: str
    replica: int
    config: TrainConfig


def lindyn_cell_id(config: DynConfig, replica: int) -> str:
    return (
        f"{config.method.value}_omega-{config.omega:g}_lam-{config.lam:g}"
        f"_eta-{config.eta:g}_sigma-{config.sigma:g}_r{replica}"
    )


def ctr_cell_id(config: TrainConfig, perturbation_index: int, replica: int) -> str:
    if config.method == TrainMethod.BASELINE:
        return f"baseline_frac-{config.train_fraction:g}_r{replica}"
    return (
        f"{config.method.value}_lam-{config.lam:g}_p{perturbation_index}"
        f"_frac-{config.train_fraction:g}_r{replica}"
    )


def replica_seed(base_seed: int, mode: ExperimentMode, replica: int, *parts: Any) -> int:
    return derive_seed(base_seed, mode.value, replica, *parts)


def _check_unique(cell_ids: List[str]) -> None:
    seen = set()
    for cell_id in cell_ids:
        if cell_id in seen:
            raise SpecValidationError("grid", f"duplicate grid cell {cell_id}")
        seen.add(cell_id)


def build_lindyn_cells(spec: ExperimentSpec) -> List[LindynCell]:
    grid = spec.lindyn
    assert grid is not None
    cells: List[LindynCell] = []
    for replica in range(spec.replicas):
        seed = replica_seed(spec.base_seed, spec.mode, replica)
        for method, omega, lam, eta, sigma in itertools.product(
            grid.methods, grid.omegas, grid.lambdas, grid.etas, grid.sigmas
        ):
            config = DynConfig(
                input_dim=grid.input_dim,
                hidden_dim=grid.hidden_dim,
                output_dim=grid.output_dim,
                eta=eta,
                lam=lam,
                omega=omega,
                sigma=sigma,
                steps=grid.steps,
                method=method,
                seed=seed,
                record_every=grid.record_every,
                input_std=grid.input_std,
                init_scale=grid.init_scale,
            )
            cells.append(LindynCell(len(cells), lindyn_cell_id(config, replica), replica, config))
    _check_unique([c.cell_id for c in cells])
    return cells


def _train_config(
    grid: CtrGrid,
    method: TrainMethod,
    lam: float,
    perturbation: PerturbationSpec,
    fraction: float,
    seed: int,
) -> TrainConfig:
    return TrainConfig(
        method=method,
        lam=lam,
        perturbation=perturbation,
        train_fraction=fraction,
        seed=seed,
        **grid.train.model_dump(),
    )


def build_ctr_cells(spec: ExperimentSpec) -> List[CtrCell]:
    grid = spec.ctr
    assert grid is not None
    treated = [m for m in grid.methods if m != TrainMethod.BASELINE]
    cells: List[CtrCell] = []
    for replica in range(spec.replicas):
        seed = replica_seed(spec.base_seed, spec.mode, replica, "train")
        for fraction in grid.train_fractions:
            baseline = _train_config(
                grid, TrainMethod.BASELINE, 0.0, PerturbationSpec.zero(), fraction, seed
            )
            cells.append(CtrCell(len(cells), ctr_cell_id(baseline, 0, replica), replica, baseline))
            for method, lam, (p_index, perturbation) in itertools.product(
                treated, grid.lambdas, enumerate(grid.perturbations)
            ):
                config = _train_config(grid, method, lam, perturbation, fraction, seed)
                cells.append(CtrCell(len(cells), ctr_cell_id(config, p_index, replica), replica, config))
    _check_unique([c.cell_id for c in cells])
    return cells


def replica_dataset(spec: ExperimentSpec, replica: int) -> Tuple[List[Example], List[Example]]:
    grid = spec.ctr
    assert grid is not None
    seed = replica_seed(spec.base_seed, spec.mode, replica, "data", grid.dataset.seed)
    examples = generate_dataset(grid.dataset.model_copy(update={"seed": seed}))
    return split_dataset(examples, grid.eval_fraction, seed)


# ---------------------------------------------------------------------------
# Cell bodies (run in worker threads)
# ---------------------------------------------------------------------------


def _lindyn_body(cell: LindynCell, out_dir: Path):
    path = out_dir / f"{cell.cell_id}.csv"

    def run() -> Trajectory:
        try:
            trajectory = run_trajectory(cell.config)
        except TrajectoryDivergedError as e:
            write_trajectory_csv(path, e.trajectory)
            raise
        write_trajectory_csv(path, trajectory)
        final = trajectory.final
        logger.info("%s done: ε=%.6g γ=%.6g", cell.cell_id, final.epsilon, final.gamma)
        return trajectory

    return run


def _ctr_body(cell: CtrCell, data: Tuple[List[Example], List[Example]], dataset_cfg, out_dir: Path):
    path = out_dir / f"{cell.cell_id}.csv"

    def run() -> Tuple[TrainResult, float, float]:
        train_set, eval_set = data
        model = build_model(dataset_cfg, cell.config)
        try:
            result = train(model, train_set, cell.config, eval_set)
        except TrainingDivergedError as e:
            write_history_csv(path, e.result)
            raise
        write_history_csv(path, result)
        eval_ne, eval_bce = evaluate(result.model, eval_set)
        logger.info("%s done: eval NE %.6f", cell.cell_id, eval_ne)
        return result, eval_ne, eval_bce

    return run


# ---------------------------------------------------------------------------
# Outcome -> report rows
# ---------------------------------------------------------------------------


def _status(outcome: CellOutcome) -> CellStatus:
    return CellStatus(outcome.status.value)


def _lindyn_row(cell: LindynCell, outcome: CellOutcome) -> LindynCellResult:
    cfg = cell.config
    row = LindynCellResult(
        cell_id=cell.cell_id,
        index=cell.index,
        method=cfg.method,
        omega=cfg.omega,
        lam=cfg.lam,
        eta=cfg.eta,
        sigma=cfg.sigma,
        replica=cell.replica,
        seed=cfg.seed,
        status=_status(outcome),
    )
    trajectory: Optional[Trajectory] = outcome.value
    if isinstance(outcome.exception, TrajectoryDivergedError):
        trajectory = outcome.exception.trajectory
        row.diverged_at = outcome.exception.step
        row.error = outcome.error
    elif outcome.status == OutcomeStatus.FAILED:
        row.error = outcome.error
    if trajectory is not None and trajectory.records:
        row.csv_file = f"{cell.cell_id}.csv"
        row.records = [
            TrajectoryPoint(step=r.step, epsilon=r.epsilon, gamma=r.gamma) for r in trajectory.records
        ]
        row.record_count = len(row.records)
        row.final_step = trajectory.final.step
        row.final_epsilon = trajectory.final.epsilon
        row.final_gamma = trajectory.final.gamma
    return row


def _ctr_row(cell: CtrCell, outcome: CellOutcome) -> CtrCellResult:
    cfg = cell.config
    row = CtrCellResult(
        cell_id=cell.cell_id,
        index=cell.index,
        method=cfg.method,
        lam=cfg.lam,
        perturbation=cfg.perturbation,
        train_fraction=cfg.train_fraction,
        replica=cell.replica,
        seed=cfg.seed,
        status=_status(outcome),
    )
    result: Optional[TrainResult] = None
    if outcome.status == OutcomeStatus.COMPLETED:
        result, row.final_eval_ne, row.eval_bce = outcome.value
    elif isinstance(outcome.exception, TrainingDivergedError):
        result = outcome.exception.result
        row.diverged_epoch = outcome.exception.epoch
        row.error = outcome.error
    else:
        row.error = outcome.error
    if result is not None:
        row.csv_file = f"{cell.cell_id}.csv"
        row.forward_passes = result.forward_passes
        row.history = [
            EpochPoint(epoch=h.epoch, train_ne=h.train_ne, eval_ne=h.eval_ne) for h in result.history
        ]
        if result.final is not None:
            row.final_train_ne = result.final.train_ne
    return row


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def write_summary(report: RunReport, out_dir: Path) -> Path:
    path = Path(out_dir) / SUMMARY_FILE
    payload = report.model_dump(mode="json")
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


async def run_experiment_async(
    spec: ExperimentSpec,
    out_dir: Path,
    jobs: int = 1,
    metrics: Optional[RunMetrics] = None,
) -> RunReport:
    out_dir = _prepare_output_dir(Path(out_dir))
    metrics = metrics or RunMetrics()
    runner = GridRunner(jobs=jobs, metrics=metrics)
    report = RunReport(
        mode=spec.mode,
        base_seed=spec.base_seed,
        replicas=spec.replicas,
        spec=spec.model_dump(mode="json"),
    )
    logger.info("starting %s experiment: %d cells, %d jobs -> %s", spec.mode.value, spec.cell_count(), jobs, out_dir)

    if spec.mode == ExperimentMode.LINDYN:
        lindyn_cells = build_lindyn_cells(spec)
        job = await runner.run(
            [CellTask(c.index, c.cell_id, _lindyn_body(c, out_dir)) for c in lindyn_cells]
        )
        report.lindyn_cells = [_lindyn_row(c, o) for c, o in zip(lindyn_cells, job.outcomes)]
    else:
        grid = spec.ctr
        assert grid is not None
        ctr_cells = build_ctr_cells(spec)
        datasets = {r: replica_dataset(spec, r) for r in range(spec.replicas)}
        job = await runner.run(
            [
                CellTask(c.index, c.cell_id, _ctr_body(c, datasets[c.replica], grid.dataset, out_dir))
                for c in ctr_cells
            ]
        )
        report.ctr_cells = [_ctr_row(c, o) for c, o in zip(ctr_cells, job.outcomes)]
        report.ctr_summary = summarize_ctr_cells(report.ctr_cells)

    write_summary(report, out_dir)
    metrics.write(out_dir / METRICS_FILE)
    logger.info(
        "finished: %d completed, %d diverged, %d failed",
        report.count(CellStatus.COMPLETED), report.count(CellStatus.DIVERGED), report.count(CellStatus.FAILED),
    )
    return report


def run_experiment(
    spec: ExperimentSpec,
    out_dir: Optional[Path] = None,
    jobs: Optional[int] = None,
    metrics: Optional[RunMetrics] = None,
) -> RunReport:
    target = resolve_output_dir(spec, out_dir)
    return asyncio.run(
        run_experiment_async(spec, target, jobs or settings.DEFAULT_JOBS, metrics)
    )


def load_report(report_dir: Path) -> RunReport:
    """Rebuild a RunReport, trajectories included, from summary.json and the cell CSVs."""
    report_dir = Path(report_dir)
    summary = report_dir / SUMMARY_FILE
    if not summary.is_file():
        raise FileNotFoundError(f"no {SUMMARY_FILE} in {report_dir}")
    report = RunReport.model_validate_json(summary.read_text(encoding="utf-8"))
    for lcell in report.lindyn_cells:
        if lcell.csv_file and (report_dir / lcell.csv_file).is_file():
            lcell.records = read_trajectory_csv(report_dir / lcell.csv_file)
        elif lcell.csv_file:
            logger.warning("missing trajectory file %s", lcell.csv_file)
    for ccell in report.ctr_cells:
        if ccell.csv_file and (report_dir / ccell.csv_file).is_file():
            ccell.history = read_history_csv(report_dir / ccell.csv_file)
        elif ccell.csv_file:
            logger.warning("missing history file %s", ccell.csv_file)
    return report
