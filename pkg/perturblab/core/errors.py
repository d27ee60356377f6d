"""
Exception hierarchy shared by the numerics, training and experiment layers.
"""
from typing import Any, Dict, Optional


class ContractViolation(ValueError):
    """A precondition of an operation does not hold (shapes, ranges, labels)."""


class DegenerateInputError(ContractViolation):
    pass


class UndefinedBaseRateError(ContractViolation):
    """NE needs both classes present; the base-rate entropy is zero otherwise."""


class SpecValidationError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class OutputDirectoryError(OSError):
    def __init__(self, path: Any, reason: str):
        self.path = path
        super().__init__(f"output directory {path} is not writable: {reason}")


class DivergenceError(RuntimeError):
    pass


class TrajectoryDivergedError(DivergenceError):
    def __init__(self, step: int, trajectory: Any = None):
        self.step = step
        self.trajectory = trajectory
        super().__init__(f"non-finite weights at step {step}")


class TrainingDivergedError(DivergenceError):
    def __init__(self, epoch: int, result: Any = None):
        self.epoch = epoch
        self.result = result
        super().__init__(f"non-finite weights in epoch {epoch}")


def error_payload(error_code: str, message: str, details: Any | None = None) -> Dict[str, Any]:
    payload: Dict[str, Any] = {"success": False, "error_code": error_code, "message": message}
    if details is not None:
        payload["details"] = details
    return payload


def error_code_for(exc: BaseException) -> str:
    if isinstance(exc, SpecValidationError):
        return "validation_error"
    if isinstance(exc, ContractViolation):
        return "contract_violation"
    if isinstance(exc, DivergenceError):
        return "diverged"
    if isinstance(exc, OSError):
        return "io_error"
    return "server_error"


def describe(exc: BaseException, details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return error_payload(error_code_for(exc), str(exc) or type(exc).__name__, details)
