"""
Data augmentation: Gaussian noise for continuous features, slot dropout for
sparse features, and the combined perturbation applied to a whole example.

Perturbations follow the feature class: dense blocks and embeddings get
continuous Gaussian noise, sparse slots get a categorical keep/drop.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from perturblab.core.errors import ContractViolation
from perturblab.schemas.experiment import FeatureGroupSpecs, PerturbationSpec
from perturblab.services.numerics import Rng, Vector, as_vector, sample_gaussian

SparseSlots = List[Optional[int]]


@dataclass(frozen=True)
class Example:
    """One training point. A sparse slot holding None reads as zero."""

    dense: Vector
    embeddings: List[Vector]
    sparse: SparseSlots
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractViolation(f"label must be 0 or 1, got {self.label}")
        as_vector(self.dense)
        for emb in self.embeddings:
            as_vector(emb)

    def same_shape(self, other: "Example") -> bool:
        return (
            self.dense.shape == other.dense.shape
            and len(self.embeddings) == len(other.embeddings)
            and all(a.shape == b.shape for a, b in zip(self.embeddings, other.embeddings))
            and len(self.sparse) == len(other.sparse)
        )


def inject_gaussian_noise(v: Vector, spec: PerturbationSpec, rng: Rng) -> Vector:
    """v + ω·ψ with ψ∼N(μ, σ) i.i.d. per entry."""
    psi = sample_gaussian(rng, v.shape[0], spec.noise_mean, spec.noise_std)
    return v + spec.noise_scale * psi


def dropout_sparse(slots: Sequence[Optional[int]], dropout_rate: float, rng: Rng) -> SparseSlots:
    """Zero each slot independently with probability dropout_rate."""
    if not 0.0 <= dropout_rate <= 1.0:
        raise ContractViolation(f"dropout_rate must lie in [0, 1], got {dropout_rate}")
    if not slots:
        return []
    draws = rng.uniform(len(slots))
    return [None if u < dropout_rate else value for u, value in zip(draws, slots)]


def perturb_example(
    ex: Example,
    spec: PerturbationSpec,
    rng: Rng,
    group_specs: Optional[FeatureGroupSpecs] = None,
) -> Example:
    """
    Build the perturbed copy of an example.

    Draw order: dense noise, each embedding's noise in order, then the slot
    dropout draws. The label is carried over unchanged.
    """
    dense_spec = spec
    embedding_spec = spec
    sparse_spec = spec
    if group_specs is not None:
        dense_spec = group_specs.dense or spec
        embedding_spec = group_specs.embeddings or spec
        sparse_spec = group_specs.sparse or spec

    dense = inject_gaussian_noise(ex.dense, dense_spec, rng)
    embeddings = [inject_gaussian_noise(e, embedding_spec, rng) for e in ex.embeddings]
    sparse = dropout_sparse(ex.sparse, sparse_spec.dropout_rate, rng)
    return Example(dense=dense, embeddings=embeddings, sparse=sparse, label=ex.label)


def perturb_batch(
    examples: Sequence[Example],
    spec: PerturbationSpec,
    rng: Rng,
    group_specs: Optional[FeatureGroupSpecs] = None,
) -> List[Example]:
    perturbed = [perturb_example(ex, spec, rng, group_specs) for ex in examples]
    # Label preservation is what makes the perturbed half trainable with original labels
    assert all(p.label == ex.label for p, ex in zip(perturbed, examples))
    return perturbed


def examples_equal(a: Example, b: Example) -> bool:
    return (
        a.label == b.label
        and np.array_equal(a.dense, b.dense)
        and len(a.embeddings) == len(b.embeddings)
        and all(np.array_equal(x, y) for x, y in zip(a.embeddings, b.embeddings))
        and list(a.sparse) == list(b.sparse)
    )
