import numpy as np
import pytest

from perturblab.core.errors import ContractViolation
from perturblab.schemas.experiment import FeatureGroupSpecs, PerturbationSpec
from perturblab.services.augment import (
    Example,
    dropout_sparse,
    examples_equal,
    inject_gaussian_noise,
    perturb_batch,
    perturb_example,
)
from perturblab.services.numerics import Rng


def make_example(label: int = 1) -> Example:
    return Example(
        dense=np.array([0.5, -1.0, 2.0]),
        embeddings=[np.array([0.1, 0.2]), np.array([-0.3, 0.4])],
        sparse=[3, None, 7, 1],
        label=label,
    )


def test_zero_noise_scale_is_identity():
    v = np.array([1.0, 2.0, 3.0])
    spec = PerturbationSpec(noise_scale=0.0)
    assert np.array_equal(inject_gaussian_noise(v, spec, Rng(0)), v)


def test_noise_matches_scaled_gaussian_draw():
    v = np.array([1.0, 2.0, 3.0])
    spec = PerturbationSpec(noise_scale=0.5, noise_std=2.0, noise_mean=0.1)
    expected = v + 0.5 * (0.1 + 2.0 * Rng(11).standard_normal(3))
    assert np.allclose(inject_gaussian_noise(v, spec, Rng(11)), expected, rtol=0, atol=1e-15)


def test_noise_statistics():
    v = np.zeros(100_000)
    spec = PerturbationSpec(noise_scale=0.1, noise_std=1.0)
    noisy = inject_gaussian_noise(v, spec, Rng(2))
    assert abs(noisy.mean()) < 0.002
    assert abs(noisy.std() - 0.1) < 0.002


def test_dropout_rates():
    slots = list(range(20))
    assert dropout_sparse(slots, 0.0, Rng(0)) == slots
    assert dropout_sparse(slots, 1.0, Rng(0)) == [None] * 20
    assert dropout_sparse([], 0.5, Rng(0)) == []


def test_dropout_empirical_rate():
    kept = dropout_sparse(list(range(50_000)), 0.3, Rng(4))
    dropped = sum(1 for s in kept if s is None) / len(kept)
    assert abs(dropped - 0.3) < 0.01


def test_dropout_rate_out_of_range():
    with pytest.raises(ContractViolation):
        dropout_sparse([1, 2], 1.5, Rng(0))
    with pytest.raises(ContractViolation):
        dropout_sparse([1, 2], -0.1, Rng(0))


def test_zero_spec_returns_equal_example():
    ex = make_example()
    assert examples_equal(perturb_example(ex, PerturbationSpec.zero(), Rng(1)), ex)


def test_perturbation_preserves_label_and_shape():
    ex = make_example(label=0)
    out = perturb_example(ex, PerturbationSpec(noise_scale=0.3, dropout_rate=0.5), Rng(8))
    assert out.label == 0
    assert out.same_shape(ex)
    assert not np.array_equal(out.dense, ex.dense)


def test_draw_order_dense_then_embeddings_then_sparse():
    ex = make_example()
    spec = PerturbationSpec(noise_scale=1.0, dropout_rate=0.5)
    out = perturb_example(ex, spec, Rng(21))

    rng = Rng(21)
    dense = ex.dense + rng.standard_normal(3)
    emb0 = ex.embeddings[0] + rng.standard_normal(2)
    emb1 = ex.embeddings[1] + rng.standard_normal(2)
    draws = rng.uniform(4)
    sparse = [None if u < 0.5 else s for u, s in zip(draws, ex.sparse)]

    assert np.array_equal(out.dense, dense)
    assert np.array_equal(out.embeddings[0], emb0)
    assert np.array_equal(out.embeddings[1], emb1)
    assert out.sparse == sparse


def test_group_overrides():
    ex = make_example()
    groups = FeatureGroupSpecs(dense=PerturbationSpec.zero(), sparse=PerturbationSpec(dropout_rate=1.0))
    out = perturb_example(ex, PerturbationSpec(noise_scale=0.5, dropout_rate=0.0), Rng(3), groups)
    assert np.array_equal(out.dense, ex.dense)
    assert not np.array_equal(out.embeddings[0], ex.embeddings[0])
    assert out.sparse == [None] * 4


def test_perturb_batch_keeps_labels():
    batch = [make_example(label=i % 2) for i in range(6)]
    out = perturb_batch(batch, PerturbationSpec(), Rng(0))
    assert [e.label for e in out] == [e.label for e in batch]


def test_example_rejects_bad_label():
    with pytest.raises(ContractViolation):
        Example(dense=np.ones(2), embeddings=[], sparse=[], label=2)
