"""
Dense linear algebra and seeded sampling.

Every weight, feature and noise vector in the lab is a float64 numpy array.
Gaussian samples come from a Box-Muller transform over the PCG64 uniform
stream, so a seed maps to the same sample stream on every platform numpy
supports.
"""
import hashlib
import math
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from perturblab.core.errors import ContractViolation

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

SEED_MASK = (1 << 64) - 1


def derive_seed(base_seed: int, *parts: object) -> int:
    """
    Derive an independent 64-bit seed from a base seed and a key.

    Deterministic: the same (base_seed, parts) always gives the same seed.
    The key is hashed with md5 and the first 64 bits of the digest are kept.
    """
    key = ":".join([str(base_seed & SEED_MASK), *(repr(p) for p in parts)])
    return int(hashlib.md5(key.encode()).hexdigest()[:16], 16)


class Rng:
    """Single-owner random stream. Not thread-safe; give each worker its own."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ContractViolation(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed & SEED_MASK
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size: int) -> Vector:
        """Uniform doubles in [0, 1)."""
        return self._generator.random(size)

    def standard_normal(self, size: int) -> Vector:
        pairs = (size + 1) // 2
        u = self._generator.random(2 * pairs)
        # 1 - u keeps the log argument in (0, 1]
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:pairs]))
        angle = 2.0 * math.pi * u[pairs:]
        samples = np.empty(2 * pairs, dtype=np.float64)
        samples[0::2] = radius * np.cos(angle)
        samples[1::2] = radius * np.sin(angle)
        return samples[:size]

    def permutation(self, n: int) -> npt.NDArray[np.int64]:
        return np.argsort(self._generator.random(n), kind="stable")

    def integers(self, high: int, size: int) -> npt.NDArray[np.int64]:
        """Integers in [0, high)."""
        draws = np.floor(self._generator.random(size) * high).astype(np.int64)
        return np.minimum(draws, high - 1)


def as_vector(entries: Iterable[float] | Vector) -> Vector:
    vec = np.asarray(entries, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ContractViolation(f"vector must be one-dimensional and non-empty, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ContractViolation("vector entries must be finite")
    return vec


def as_matrix(entries: Sequence[Sequence[float]] | Matrix, rows: int | None = None,
              cols: int | None = None) -> Matrix:
    mat = np.asarray(entries, dtype=np.float64)
    if rows is not None and cols is not None:
        if mat.size != rows * cols:
            raise ContractViolation(f"expected {rows * cols} entries, got {mat.size}")
        mat = mat.reshape(rows, cols)
    if mat.ndim != 2 or mat.shape[0] == 0 or mat.shape[1] == 0:
        raise ContractViolation(f"matrix must be two-dimensional and non-empty, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ContractViolation("matrix entries must be finite")
    return mat


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matvec(a: Matrix, v: Vector) -> Vector:
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ContractViolation(f"cannot multiply {a.shape} by vector {v.shape}")
    return a @ v


def outer(u: Vector, v: Vector) -> Matrix:
    if u.ndim != 1 or v.ndim != 1:
        raise ContractViolation(f"outer expects vectors, got {u.shape} and {v.shape}")
    return np.outer(u, v)


def frobenius_inner(a: Matrix, b: Matrix) -> float:
    if a.shape != b.shape:
        raise ContractViolation(f"frobenius_inner shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def frobenius_norm(a: Matrix) -> float:
    return math.sqrt(frobenius_inner(a, a))


def sample_gaussian(rng: Rng, dim: int, mean: float = 0.0, std: float = 1.0) -> Vector:
    """
    Draw dim i.i.d. N(mean, std^2) entries.

    std=0 still consumes the stream, so callers sharing an Rng stay aligned.
    """
    if std < 0:
        raise ContractViolation(f"std must be non-negative, got {std}")
    if dim < 1:
        raise ContractViolation(f"dim must be positive, got {dim}")
    return mean + std * rng.standard_normal(dim)