import numpy as np

from netloc import numcore as nc


def test_adam_first_step_hand_computed():
    # m = 0.1*g, v = 0.001*g^2, mhat = g, vhat = g^2
    # step = lr * g / (|g| + eps) ~= lr for g=1
    params = {"w": np.array([[1.0]])}
    grads = {"w": np.array([[1.0]])}
    state = nc.AdamState(lr=0.01)
    new, st = nc.adam_step(params, grads, state)
    expected = 1.0 - 0.01 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(new["w"], [[expected]], rtol=1e-12)
    assert st.step == 1


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([[2.0, -3.0]])}
    grads = {"w": np.zeros((1, 2))}
    new, _ = nc.adam_step(params, grads, nc.AdamState())
    np.testing.assert_array_equal(new["w"], params["w"])


def test_adam_pure_transition():
    rng = np.random.default_rng(0)
    params = {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal((2, 2))}
    grads = {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal((2, 2))}
    state = nc.AdamState(lr=0.05)
    out1, st1 = nc.adam_step(params, grads, state)
    out2, st2 = nc.adam_step(params, grads, state)
    for k in params:
        assert np.array_equal(out1[k], out2[k])
        assert np.array_equal(st1.m[k], st2.m[k])
    # inputs untouched
    assert state.step == 0 and not state.m


def test_adam_matches_reference_sequence():
    # independent oracle: textbook recurrences unrolled in straight numpy
    rng = np.random.default_rng(7)
    p = rng.standard_normal((4, 3))
    params = {"w": p.copy()}
    state = nc.AdamState(lr=0.02)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    ref = p.copy()
    for t in range(1, 6):
        g = rng.standard_normal(p.shape)
        params, state = nc.adam_step(params, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.02 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(params["w"], ref, atol=1e-14)
    assert state.step == 5


def test_sgd_step():
    new = nc.sgd_step({"w": np.array([[1.0]])}, {"w": np.array([[2.0]])}, 0.1)
    np.testing.assert_allclose(new["w"], [[0.8]], rtol=1e-15)
