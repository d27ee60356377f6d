"""
Concurrent execution of experiment grid cells.

Each cell is a CPU-bound callable that owns its RNG streams and output file.
Cells run in worker threads under a semaphore; one cell's failure never
aborts the others.
"""
import asyncio
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

from perturblab.core.errors import DivergenceError, describe
from perturblab.services.metrics import PerformanceMonitor, RunMetrics

logger = logging.getLogger(__name__)


class GridStatus(str, Enum):
    PENDING = "pending"
    PROCESSING = "processing"
    COMPLETED = "completed"


class OutcomeStatus(str, Enum):
    COMPLETED = "completed"
    DIVERGED = "diverged"
    FAILED = "failed"


@dataclass
class CellTask:
    index: int
    cell_id: str
    run: Callable[[], Any]


@dataclass
class CellOutcome:
    index: int
    cell_id: str
    status: OutcomeStatus
    value: Any = None
    exception: Optional[BaseException] = None
    error: Optional[Dict[str, Any]] = None
    duration_seconds: float = 0.0


@dataclass
class GridJob:
    total_cells: int
    status: GridStatus = GridStatus.PENDING
    processed: int = 0
    completed: int = 0
    diverged: int = 0
    failed: int = 0
    outcomes: List[CellOutcome] = field(default_factory=list)


class GridRunner:
    """
    Runs grid cells with bounded concurrency:
    - asyncio.Semaphore(jobs) caps cells in flight
    - each cell executes in a worker thread
    - divergence is an outcome, any other exception marks the cell failed
    """

    def __init__(self, jobs: int = 1, metrics: Optional[RunMetrics] = None):
        if jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {jobs}")
        self.jobs = jobs
        self.metrics = metrics or RunMetrics()

    async def run(self, tasks: Sequence[CellTask]) -> GridJob:
        job = GridJob(total_cells=len(tasks), status=GridStatus.PROCESSING)
        self.metrics.set_gauge("cells_scheduled", len(tasks))
        semaphore = asyncio.Semaphore(self.jobs)

        results = await asyncio.gather(
            *(self._run_cell(task, semaphore) for task in tasks), return_exceptions=True
        )

        # gather keeps task order, so outcomes come back in grid order
        for task, result in zip(tasks, results):
            if isinstance(result, BaseException):
                result = CellOutcome(
                    index=task.index,
                    cell_id=task.cell_id,
                    status=OutcomeStatus.FAILED,
                    exception=result,
                    error=describe(result, {"cell_id": task.cell_id}),
                )
            job.outcomes.append(result)
            job.processed += 1
            if result.status == OutcomeStatus.COMPLETED:
                job.completed += 1
            elif result.status == OutcomeStatus.DIVERGED:
                job.diverged += 1
            else:
                job.failed += 1

        job.status = GridStatus.COMPLETED
        logger.info(
            "grid finished: %d completed, %d diverged, %d failed",
            job.completed, job.diverged, job.failed,
        )
        return job

    async def _run_cell(self, task: CellTask, semaphore: asyncio.Semaphore) -> CellOutcome:
        async with semaphore:
            self.metrics.inc_counter("cells_started_total")
            self.metrics.add_gauge("cells_in_flight", 1)
            monitor = PerformanceMonitor(self.metrics, "cell_duration_seconds")
            try:
                with monitor:
                    value = await asyncio.to_thread(task.run)
                self.metrics.inc_counter("cells_completed_total")
                return CellOutcome(
                    index=task.index,
                    cell_id=task.cell_id,
                    status=OutcomeStatus.COMPLETED,
                    value=value,
                    duration_seconds=monitor.elapsed or 0.0,
                )
            except DivergenceError as e:
                self.metrics.inc_counter("cells_diverged_total")
                logger.warning("cell %s diverged: %s", task.cell_id, e)
                return CellOutcome(
                    index=task.index,
                    cell_id=task.cell_id,
                    status=OutcomeStatus.DIVERGED,
                    exception=e,
                    error=describe(e, {"cell_id": task.cell_id}),
                    duration_seconds=monitor.elapsed or 0.0,
                )
            except Exception as e:
                error = describe(e, {"cell_id": task.cell_id})
                self.metrics.inc_counter(
                    "cells_failed_total", labels={"error_code": error["error_code"]}
                )
                logger.error("cell %s failed: %s", task.cell_id, e)
                return CellOutcome(
                    index=task.index,
                    cell_id=task.cell_id,
                    status=OutcomeStatus.FAILED,
                    exception=e,
                    error=error,
                    duration_seconds=monitor.elapsed or 0.0,
                )
            finally:
                self.metrics.add_gauge("cells_in_flight", -1)


def run_grid(tasks: Sequence[CellTask], jobs: int = 1, metrics: Optional[RunMetrics] = None) -> GridJob:
    return asyncio.run(GridRunner(jobs=jobs, metrics=metrics).run(tasks))
