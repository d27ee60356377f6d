import numpy as np
import pytest

from perturblab.core.errors import ContractViolation, DegenerateInputError, TrajectoryDivergedError
from perturblab.schemas.experiment import DynConfig, DynMethod
from perturblab.services.lindyn import (
    DynState,
    epsilon,
    gamma,
    init_state,
    lspr_step,
    run_trajectory,
    scr_step,
    sgd_step,
    teacher_label,
    update_rules,
)
from perturblab.services.numerics import Rng

H = 1e-5
L_X, L_H, L_Y = 4, 3, 2


@pytest.fixture
def setup():
    config = DynConfig(input_dim=L_X, hidden_dim=L_H, output_dim=L_Y, init_scale=1.0)
    rng = Rng(123)
    state = init_state(config, rng)
    x = rng.standard_normal(L_X)
    z = rng.standard_normal(L_X)
    return state, x, teacher_label(state, x) + 0.3, z


def _loss(method, state, w1, w2, x, y, z, lam, omega, sigma):
    out = w2 @ w1 @ x
    value = 0.5 * np.sum((out - y) ** 2)
    if method == "sgd":
        return value
    x_pert = omega * sigma * z + x
    if method == "lspr":
        return value + lam * 0.5 * np.sum((w2 @ w1 @ x_pert - y) ** 2)
    target = state.w2 @ state.w1 @ x
    return value + lam * 0.5 * np.sum((w2 @ w1 @ x_pert - target) ** 2)


def _fd_gradients(method, state, x, y, z, lam, omega, sigma):
    grads = []
    for which in ("w1", "w2"):
        base = getattr(state, which)
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += H
            minus[idx] -= H
            args_p = (plus, state.w2) if which == "w1" else (state.w1, plus)
            args_m = (minus, state.w2) if which == "w1" else (state.w1, minus)
            grad[idx] = (
                _loss(method, state, *args_p, x, y, z, lam, omega, sigma)
                - _loss(method, state, *args_m, x, y, z, lam, omega, sigma)
            ) / (2 * H)
        grads.append(grad)
    return grads


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)


@pytest.mark.parametrize("method", ["sgd", "lspr", "scr"])
def test_update_matches_finite_differences(setup, method):
    state, x, y, z = setup
    lam, omega, sigma = 0.7, 0.4, 1.3
    if method == "sgd":
        new = sgd_step(state, x, y, eta=1.0)
    elif method == "lspr":
        new = lspr_step(state, x, y, z, 1.0, lam, omega, sigma)
    else:
        new = scr_step(state, x, y, z, 1.0, lam, omega, sigma)

    fd_w1, fd_w2 = _fd_gradients(method, state, x, y, z, lam, omega, sigma)
    assert _relative_error(state.w1 - new.w1, fd_w1) < 1e-5
    assert _relative_error(state.w2 - new.w2, fd_w2) < 1e-5
    assert new.step == state.step + 1


def test_lambda_zero_reduces_to_sgd(setup):
    state, x, y, z = setup
    sgd = sgd_step(state, x, y, 1.4)
    for step in (lspr_step, scr_step):
        new = step(state, x, y, z, 1.4, 0.0, 0.5, 1.0)
        assert np.array_equal(new.w1, sgd.w1)
        assert np.array_equal(new.w2, sgd.w2)


def test_scr_without_perturbation_is_sgd(setup):
    state, x, y, z = setup
    sgd = sgd_step(state, x, y, 1.4)
    new = scr_step(state, x, y, z, 1.4, 0.8, 0.0, 1.0)
    assert np.array_equal(new.w1, sgd.w1)
    assert np.array_equal(new.w2, sgd.w2)


def test_lspr_without_perturbation_scales_sgd_update(setup):
    state, x, y, z = setup
    lam = 0.35
    sgd = sgd_step(state, x, y, 1.4)
    new = lspr_step(state, x, y, z, 1.4, lam, 0.0, 1.0)
    np.testing.assert_allclose(new.w1 - state.w1, (1 + lam) * (sgd.w1 - state.w1), rtol=0, atol=1e-12)
    np.testing.assert_allclose(new.w2 - state.w2, (1 + lam) * (sgd.w2 - state.w2), rtol=0, atol=1e-12)


def test_step_rejects_wrong_dimensions(setup):
    state, x, y, z = setup
    with pytest.raises(ContractViolation):
        sgd_step(state, np.ones(L_X + 1), y, 1.0)
    with pytest.raises(ContractViolation):
        lspr_step(state, x, y, np.ones(2), 1.0, 0.1, 0.1, 1.0)


def test_metric_identities():
    w_star = Rng(0).standard_normal(6).reshape(2, 3)
    eye = np.eye(3)

    exact = DynState(w_star=w_star, w1=eye, w2=w_star.copy())
    assert epsilon(exact) == 0.0
    assert gamma(exact) == pytest.approx(1.0, abs=1e-12)

    shifted = DynState(w_star=w_star, w1=eye, w2=w_star + 0.25)
    assert epsilon(shifted) == pytest.approx(0.0625, abs=1e-12)

    doubled = DynState(w_star=w_star, w1=eye, w2=2 * w_star)
    assert gamma(doubled) == pytest.approx(1.0, abs=1e-12)

    flipped = DynState(w_star=w_star, w1=eye, w2=-w_star)
    assert gamma(flipped) == pytest.approx(-1.0, abs=1e-12)


def test_gamma_undefined_for_zero_product():
    w_star = np.ones((2, 3))
    state = DynState(w_star=w_star, w1=np.zeros((4, 3)), w2=np.ones((2, 4)))
    with pytest.raises(DegenerateInputError):
        gamma(state)


def test_state_shape_check():
    with pytest.raises(ContractViolation):
        DynState(w_star=np.ones((2, 3)), w1=np.ones((4, 3)), w2=np.ones((2, 5)))


def test_init_state_shapes_and_seed():
    config = DynConfig(input_dim=L_X, hidden_dim=L_H, output_dim=L_Y)
    state = init_state(config, Rng(5))
    assert state.w_star.shape == (L_Y, L_X)
    assert state.w1.shape == (L_H, L_X)
    assert state.w2.shape == (L_Y, L_H)
    assert state.step == 0

    again = init_state(config, Rng(5))
    for name in ("w_star", "w1", "w2"):
        assert np.array_equal(getattr(state, name), getattr(again, name))
    assert not np.array_equal(state.w_star, init_state(config, Rng(6)).w_star)


def test_small_init_error_is_the_teacher_mean_square():
    config = DynConfig(input_dim=20, hidden_dim=30, output_dim=5, init_scale=1e-3)
    state = init_state(config, Rng(8))
    assert epsilon(state) == pytest.approx(float(np.mean(state.w_star**2)), rel=1e-4)


def test_teacher_label():
    state = init_state(DynConfig(input_dim=L_X, hidden_dim=L_H, output_dim=L_Y), Rng(2))
    rng = Rng(3)
    x1, x2 = rng.standard_normal(L_X), rng.standard_normal(L_X)

    assert np.array_equal(teacher_label(state, np.zeros(L_X)), np.zeros(L_Y))
    assert np.allclose(teacher_label(state, x1), state.w_star @ x1, rtol=0.0, atol=1e-12)
    assert np.allclose(
        teacher_label(state, 2.0 * x1 - 0.5 * x2),
        2.0 * teacher_label(state, x1) - 0.5 * teacher_label(state, x2),
        rtol=0.0,
        atol=1e-12,
    )
    assert np.array_equal(teacher_label(state, np.eye(L_X)[1]), state.w_star[:, 1])
    with pytest.raises(ContractViolation):
        teacher_label(state, np.ones(L_X + 1))


def test_gamma_ignores_positive_scaling():
    state = init_state(DynConfig(input_dim=L_X, hidden_dim=L_H, output_dim=L_Y), Rng(4))
    reference = gamma(state)
    for a, b, c in [(3.0, 1.0, 1.0), (1.0, 0.01, 1.0), (1.0, 1.0, 250.0), (0.2, 7.0, 0.5)]:
        scaled = DynState(w_star=c * state.w_star, w1=a * state.w1, w2=b * state.w2)
        assert gamma(scaled) == pytest.approx(reference, abs=1e-12)
    flipped = DynState(w_star=state.w_star, w1=-state.w1, w2=state.w2)
    assert gamma(flipped) == pytest.approx(-reference, abs=1e-12)


def test_registry_covers_all_methods():
    for method in DynMethod:
        assert method in update_rules
    with pytest.raises(ValueError):
        update_rules.get("ADAM")


def small_config(**overrides) -> DynConfig:
    values = dict(input_dim=6, hidden_dim=12, output_dim=3, steps=250, record_every=50, seed=9)
    values.update(overrides)
    return DynConfig(**values)


def test_trajectory_is_deterministic():
    a = run_trajectory(small_config())
    b = run_trajectory(small_config())
    assert a.records == b.records


def test_record_schedule():
    trajectory = run_trajectory(small_config(steps=230, record_every=50))
    assert trajectory.steps() == [0, 50, 100, 150, 200, 230]

    empty = run_trajectory(small_config(steps=0))
    assert empty.steps() == [0]


def test_methods_share_inputs_within_a_seed():
    # λ=0 makes LSPR and SCR walk the SGD path exactly when streams are shared
    sgd = run_trajectory(small_config(method=DynMethod.SGD))
    lspr = run_trajectory(small_config(method=DynMethod.LSPR, lam=0.0))
    scr = run_trajectory(small_config(method=DynMethod.SCR, lam=0.0))
    assert sgd.records == lspr.records == scr.records


def test_sgd_reduces_weight_error():
    trajectory = run_trajectory(
        small_config(method=DynMethod.SGD, steps=4000, record_every=1000, input_std=0.3, eta=0.1)
    )
    assert trajectory.final.epsilon < trajectory.records[0].epsilon


def test_sgd_aligns_with_the_teacher_on_the_default_config():
    config = DynConfig(hidden_dim=1000, steps=10_000, record_every=10_000, method=DynMethod.SGD)
    trajectory = run_trajectory(config)
    assert trajectory.steps() == [0, 10_000]
    assert trajectory.final.gamma > trajectory.records[0].gamma


def test_divergence_is_reported_with_partial_trajectory():
    with pytest.raises(TrajectoryDivergedError) as info:
        run_trajectory(small_config(eta=1e8, input_std=1.0, steps=500, record_every=1))
    err = info.value
    assert 1 <= err.step <= 500
    assert err.trajectory.diverged_at == err.step
    assert err.trajectory.records[0].step == 0
    assert len(err.trajectory.records) == err.step
