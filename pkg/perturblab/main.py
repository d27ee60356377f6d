"""
perturblab command line.

    perturblab lindyn --spec FILE [--lh N] [--steps N] [--out DIR] [--full] [--jobs N]
    perturblab ctr    --spec FILE [--out DIR] [--jobs N]
    perturblab plot   --report DIR --panel gamma|epsilon

Exit codes: 0 every cell completed (divergence included), 1 a cell failed,
2 bad spec, unwritable output directory or nothing to plot.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from perturblab.core.config import settings
from perturblab.core.errors import ContractViolation, SpecValidationError
from perturblab.schemas.experiment import ExperimentMode
from perturblab.schemas.report import CellStatus, RunReport
from perturblab.services.experiment import (
    apply_lindyn_overrides,
    load_report,
    load_spec,
    resolve_output_dir,
    run_experiment,
)
from perturblab.services.ne_report import format_gain_table
from perturblab.services.plotting import emit_plot

logger = logging.getLogger("perturblab")

EXIT_OK = 0
EXIT_CELL_FAILED = 1
EXIT_USAGE = 2


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perturblab",
        description=f"{settings.PROJECT_NAME}: perturbation regularization experiments (lindyn / ctr)",
    )
    parser.add_argument(
        "--version", action="version", version=f"{settings.PROJECT_NAME} {settings.VERSION}"
    )
    parser.add_argument("--log-level", default=None, help=f"default: {settings.LOG_LEVEL}")
    sub = parser.add_subparsers(dest="command", required=True)

    lindyn = sub.add_parser("lindyn", help="teacher/student learning-dynamics grid")
    lindyn.add_argument("--spec", type=Path, required=True)
    lindyn.add_argument("--lh", type=int, default=None, help="hidden width L_h")
    lindyn.add_argument("--steps", type=int, default=None)
    lindyn.add_argument("--out", type=Path, default=None)
    lindyn.add_argument(
        "--full", action="store_true", help="use the spec's full-scale dimensions instead of desk scale"
    )
    lindyn.add_argument("--jobs", type=int, default=None)

    ctr = sub.add_parser("ctr", help="synthetic CTR baseline/SCR/LSPR grid")
    ctr.add_argument("--spec", type=Path, required=True)
    ctr.add_argument("--out", type=Path, default=None)
    ctr.add_argument("--jobs", type=int, default=None)

    plot = sub.add_parser("plot", help="γ or ε panel from a lindyn report")
    plot.add_argument("--report", type=Path, required=True)
    plot.add_argument("--panel", choices=["gamma", "epsilon"], required=True)
    return parser


def _exit_code(report: RunReport) -> int:
    return EXIT_OK if report.count(CellStatus.FAILED) == 0 else EXIT_CELL_FAILED


def _run(args: argparse.Namespace, mode: ExperimentMode) -> int:
    spec = load_spec(args.spec)
    if spec.mode != mode:
        raise SpecValidationError("mode", f"spec is a {spec.mode.value} spec, command is {mode.value}")
    if mode == ExperimentMode.LINDYN:
        spec = apply_lindyn_overrides(spec, hidden_dim=args.lh, steps=args.steps, full=args.full)
    jobs = args.jobs if args.jobs is not None else settings.DEFAULT_JOBS
    if jobs < 1:
        raise SpecValidationError("--jobs", "must be at least 1")

    out_dir = resolve_output_dir(spec, args.out)
    report = run_experiment(spec, out_dir, jobs)
    if mode == ExperimentMode.CTR:
        print(format_gain_table(report.ctr_summary))
    print(
        f"{report.count(CellStatus.COMPLETED)} completed, "
        f"{report.count(CellStatus.DIVERGED)} diverged, "
        f"{report.count(CellStatus.FAILED)} failed -> {out_dir}"
    )
    return _exit_code(report)


def _plot(args: argparse.Namespace) -> int:
    report = load_report(args.report)
    svg_path, csv_path = emit_plot(report, args.panel, args.report)
    print(f"{svg_path}\n{csv_path}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.command == "lindyn":
            return _run(args, ExperimentMode.LINDYN)
        if args.command == "ctr":
            return _run(args, ExperimentMode.CTR)
        return _plot(args)
    except SpecValidationError as e:
        logger.error("invalid spec: %s", e)
    except (ContractViolation, OSError) as e:
        logger.error("%s", e)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
