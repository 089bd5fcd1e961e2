"""Moment-based optimizer against a hand simulation and known properties."""
import math

import numpy as np
import pytest

from obtree.adam import AdamState, adam_init, adam_step
from obtree.errors import NumericError


def test_single_step_hand_value():
    # m_hat = v_hat = 1 after one unit-gradient step, so the move is
    # -alpha / (1 + eps) regardless of dimension.
    state = adam_init(1)
    new = adam_step(state, np.zeros(1), np.ones(1))
    assert new[0] == -0.001 / (1.0 + 1e-8)
    assert state.t == 1


def test_first_step_size_is_alpha_for_any_gradient_scale():
    for scale in (1e-6, 1.0, 1e6):
        state = adam_init(3, alpha=0.01)
        new = adam_step(state, np.zeros(3), np.full(3, scale))
        step = np.abs(new)
        assert np.all(step <= 0.01 + 1e-12)
        assert np.all(step >= 0.009)


def test_matches_independent_simulation():
    rng = np.random.default_rng(21)
    state = adam_init(4, alpha=0.02, beta1=0.85, beta2=0.99, eps=1e-7)
    params = rng.normal(size=4)
    m = np.zeros(4)
    v = np.zeros(4)
    expected = params.copy()
    for t in range(1, 51):
        grad = rng.normal(size=4)
        params = adam_step(state, params, grad)
        m = 0.85 * m + 0.15 * grad
        v = 0.99 * v + 0.01 * grad * grad
        mhat = m / (1.0 - 0.85 ** t)
        vhat = v / (1.0 - 0.99 ** t)
        expected = expected - 0.02 * mhat / (np.sqrt(vhat) + 1e-7)
        np.testing.assert_allclose(params, expected, rtol=1e-12, atol=1e-15)


def test_converges_on_quadratic():
    state = adam_init(1, alpha=0.05)
    x = np.array([10.0])
    for _ in range(2000):
        x = adam_step(state, x, 2.0 * (x - 3.0))
    assert abs(x[0] - 3.0) < 1e-3


def test_deterministic_trajectories():
    grads = np.random.default_rng(22).normal(size=(30, 2))

    def run():
        state = adam_init(2)
        p = np.zeros(2)
        for g in grads:
            p = adam_step(state, p, g)
        return p

    np.testing.assert_array_equal(run(), run())


def test_init_validation():
    with pytest.raises(ValueError):
        adam_init(0)
    with pytest.raises(ValueError):
        adam_init(2, alpha=-0.1)
    with pytest.raises(ValueError):
        adam_init(2, beta1=1.0)
    with pytest.raises(ValueError):
        adam_init(2, beta2=-0.1)
    with pytest.raises(ValueError):
        adam_init(2, eps=0.0)


def test_step_rejects_bad_gradients():
    state = adam_init(2)
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(3), np.zeros(3))
    with pytest.raises(NumericError) as err:
        adam_step(state, np.zeros(2), np.array([0.0, math.nan]))
    assert "index 1" in str(err.value)


def test_state_dataclass_defaults():
    state = AdamState()
    assert state.alpha == 0.001 and state.t == 0
