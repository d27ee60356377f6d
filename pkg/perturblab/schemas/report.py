from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from perturblab.schemas.experiment import DynMethod, ExperimentMode, PerturbationSpec, TrainMethod


class CellStatus(str, Enum):
    COMPLETED = "completed"
    DIVERGED = "diverged"
    FAILED = "failed"


class TrajectoryPoint(BaseModel):
    step: int
    epsilon: float
    gamma: float


class EpochPoint(BaseModel):
    epoch: int
    train_ne: Optional[float] = None
    eval_ne: Optional[float] = None


class LindynCellResult(BaseModel):
    cell_id: str = Field(..., description="Stem of the cell's CSV file")
    index: int
    method: DynMethod
    omega: float
    lam: float
    eta: float
    sigma: float
    replica: int
    seed: int
    status: CellStatus
    csv_file: Optional[str] = None
    record_count: int = 0
    final_step: Optional[int] = None
    final_epsilon: Optional[float] = None
    final_gamma: Optional[float] = None
    diverged_at: Optional[int] = None
    error: Optional[Dict[str, Any]] = None
    records: List[TrajectoryPoint] = Field(default_factory=list, exclude=True)

    @property
    def label(self) -> str:
        return f"{self.method.value} ω={self.omega:g} λ={self.lam:g}"


class CtrCellResult(BaseModel):
    cell_id: str
    index: int
    method: TrainMethod
    lam: float
    perturbation: PerturbationSpec
    train_fraction: float
    replica: int
    seed: int
    status: CellStatus
    csv_file: Optional[str] = None
    final_train_ne: Optional[float] = None
    final_eval_ne: Optional[float] = None
    eval_bce: Optional[float] = None
    forward_passes: int = 0
    diverged_epoch: Optional[int] = None
    error: Optional[Dict[str, Any]] = None
    history: List[EpochPoint] = Field(default_factory=list, exclude=True)

    @property
    def config_key(self) -> tuple:
        if self.method == TrainMethod.BASELINE:
            return (self.method.value, None, None, self.train_fraction)
        return (self.method.value, self.lam, self.perturbation, self.train_fraction)


class CtrSummaryRow(BaseModel):
    method: TrainMethod
    lam: Optional[float] = None
    perturbation: Optional[PerturbationSpec] = None
    train_fraction: float
    mean_eval_ne: Optional[float] = None
    relative_gain: Optional[float] = Field(None, description="(NE_baseline - NE)/NE_baseline")
    gain_std: Optional[float] = Field(None, description="Std of per-replica paired gains")
    seed_count: int = 0
    diverged_count: int = 0
    is_best: bool = False

    @property
    def label(self) -> str:
        if self.method == TrainMethod.BASELINE:
            return "Baseline"
        return f"{self.method.value} λ={self.lam:g}"


class RunReport(BaseModel):
    mode: ExperimentMode
    base_seed: int
    replicas: int
    spec: Dict[str, Any] = Field(default_factory=dict)
    lindyn_cells: List[LindynCellResult] = Field(default_factory=list)
    ctr_cells: List[CtrCellResult] = Field(default_factory=list)
    ctr_summary: List[CtrSummaryRow] = Field(default_factory=list)

    @property
    def cells(self) -> List[LindynCellResult] | List[CtrCellResult]:
        return self.lindyn_cells if self.mode == ExperimentMode.LINDYN else self.ctr_cells

    def count(self, status: CellStatus) -> int:
        return sum(1 for c in self.cells if c.status == status)

    @property
    def ok(self) -> bool:
        return self.count(CellStatus.FAILED) == 0
