import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescall.errors import DimensionError, TrainingError
from bayescall.optimizer import AdamState, adam_step


def test_zero_gradient_leaves_parameters_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(params, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(new["w"], params["w"])
    assert state.step == 1


def test_first_step_closed_form():
    # g = 1, defaults: mhat = 1, vhat = 1, delta = -lr / (1 + eps)
    params = {"w": np.array([0.0])}
    new, state = adam_step(params, {"w": np.array([1.0])}, AdamState())
    assert new["w"][0] == pytest.approx(-0.000999999990, abs=1e-12)
    assert state.step == 1


def test_constant_gradient_step_approaches_learning_rate():
    # with a constant gradient mhat -> g and vhat -> g^2, so |delta| -> lr
    params = {"w": np.array([0.0])}
    state = AdamState()
    g = {"w": np.array([0.5])}
    for _ in range(5000):
        prev = params["w"][0]
        params, state = adam_step(params, g, state)
    assert abs(params["w"][0] - prev) == pytest.approx(0.001, rel=1e-4)


def test_moments_bias_correction_matches_hand_rollout():
    rng = np.random.default_rng(0)
    gs = [rng.standard_normal(3) for _ in range(4)]
    params = {"w": np.zeros(3)}
    state = AdamState(learning_rate=0.01)
    m = np.zeros(3)
    v = np.zeros(3)
    theta = np.zeros(3)
    for t, g in enumerate(gs, start=1):
        params, state = adam_step(params, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** t)
        vhat = v / (1 - 0.999 ** t)
        theta = theta - 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(params["w"], theta, rtol=0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_step_magnitude_bound(gradient_sequence):
    # Cauchy-Schwarz bound on |m| / sqrt(v) gives, per coordinate,
    # |delta| <= lr * (1-b1)/(1-b1^t) * sqrt((1-b2^t)/(1-b2))
    #               * sqrt((1 - r^t) / (1 - r)),  r = b1^2 / b2
    lr, b1, b2 = 0.001, 0.9, 0.999
    r = b1 * b1 / b2
    params = {"w": np.array([0.0])}
    state = AdamState()
    for t, g in enumerate(gradient_sequence, start=1):
        new, state = adam_step(params, {"w": np.array([g])}, state)
        bound = (lr * (1 - b1) / (1 - b1 ** t)
                 * math.sqrt((1 - b2 ** t) / (1 - b2))
                 * math.sqrt((1 - r ** t) / (1 - r)))
        assert abs(new["w"][0] - params["w"][0]) <= bound + 1e-15
        params = new


def test_determinism_bit_identical():
    rng = np.random.default_rng(2)
    params = {"a": rng.standard_normal((3, 3)), "b": rng.standard_normal(4)}
    grads = {"a": rng.standard_normal((3, 3)), "b": rng.standard_normal(4)}
    state = AdamState(step=3,
                      m={k: rng.standard_normal(v.shape) for k, v in params.items()},
                      v={k: rng.uniform(0, 1, v.shape) for k, v in params.items()})
    p1, s1 = adam_step(params, grads, state)
    p2, s2 = adam_step(params, grads, state)
    for k in params:
        assert p1[k].tobytes() == p2[k].tobytes()
        assert s1.m[k].tobytes() == s2.m[k].tobytes()


def test_no_aliasing_between_old_and_new_state():
    params = {"w": np.ones(2)}
    grads = {"w": np.full(2, 0.5)}
    state = AdamState()
    new_params, new_state = adam_step(params, grads, state)
    assert new_params["w"] is not params["w"]
    new_state.m["w"][0] = 99.0
    assert state.m == {}
    np.testing.assert_array_equal(params["w"], np.ones(2))


def test_shape_mismatch_raises_dimension_error():
    with pytest.raises(DimensionError):
        adam_step({"w": np.ones(3)}, {"w": np.ones(4)}, AdamState())
    with pytest.raises(DimensionError):
        adam_step({"w": np.ones(3)}, {}, AdamState())


def test_nonfinite_gradient_names_parameter():
    grads = {"w": np.array([1.0, math.nan])}
    with pytest.raises(TrainingError, match="'w'"):
        adam_step({"w": np.zeros(2)}, grads, AdamState())


def test_second_moment_stays_nonnegative():
    rng = np.random.default_rng(5)
    params = {"w": np.zeros(8)}
    state = AdamState()
    for _ in range(50):
        params, state = adam_step(params, {"w": rng.standard_normal(8)}, state)
        assert (state.v["w"] >= 0).all()
        assert state.step <= 50
