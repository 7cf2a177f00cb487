import numpy as np
import pytest

from clickmask.errors import ClickmaskError, FrozenParameterError, ShapeError
from clickmask.numeric import Adam, AdamState, Parameter, adam_step, ops


def test_first_step_moves_by_lr_times_sign():
    # with zero moments, one step is -lr * g / (|g| + eps) ~= -lr * sign(g)
    p = Parameter(np.array([1.0, 1.0, 1.0], dtype=np.float64))
    p.accumulate_grad(np.array([0.5, -2.0, 1e-3]))
    s = AdamState.for_param(p, lr=0.1)
    adam_step(p, s)
    np.testing.assert_allclose(p.data, [0.9, 1.1, 0.9], atol=1e-6)
    assert s.step_count == 1


def test_frozen_parameter_rejected():
    p = Parameter(np.ones(2), trainable=False)
    with pytest.raises(FrozenParameterError):
        adam_step(p, AdamState.for_param(p))


def test_missing_gradient_rejected():
    p = Parameter(np.ones(2))
    with pytest.raises(ClickmaskError):
        adam_step(p, AdamState.for_param(p))


def test_moment_shape_mismatch_rejected():
    p = Parameter(np.ones(3))
    p.accumulate_grad(np.ones(3))
    bad = AdamState(np.zeros(2), np.zeros(2))
    with pytest.raises(ShapeError):
        adam_step(p, bad)


def test_converges_on_quadratic():
    p = Parameter(np.full(4, 5.0, dtype=np.float64))
    opt = Adam({"p": p}, lr=0.05)
    for _ in range(400):
        opt.zero_grad()
        ops.sum_(ops.mul(p, p)).backward()
        opt.step()
    assert np.abs(p.data).max() < 0.05


def test_wrapper_excludes_frozen_params():
    live = Parameter(np.ones(2))
    frozen = Parameter(np.ones(2), trainable=False)
    opt = Adam({"live": live, "frozen": frozen})
    assert opt.param_names == ["live"]
    assert "frozen" not in opt.states


def test_step_skips_params_without_grad():
    a = Parameter(np.ones(2))
    b = Parameter(np.ones(2))
    a.accumulate_grad(np.ones(2))
    opt = Adam({"a": a, "b": b}, lr=0.1)
    opt.step()  # b has no grad; must not raise
    assert not np.array_equal(a.data, np.ones(2))
    np.testing.assert_array_equal(b.data, np.ones(2))


def test_set_lr_reaches_every_state():
    opt = Adam({"a": Parameter(np.ones(1)), "b": Parameter(np.ones(1))}, lr=1e-3)
    opt.set_lr(1e-4)
    assert all(s.lr == 1e-4 for s in opt.states.values())


def test_state_roundtrip_resumes_identically():
    rng = np.random.default_rng(11)

    def run(start, steps, opt, p):
        for i in range(start, start + steps):
            opt.zero_grad()
            g = np.sin(p.data + i)  # deterministic pseudo-gradient
            p.accumulate_grad(g)
            opt.step()

    p1 = Parameter(rng.standard_normal(6))
    opt1 = Adam({"p": p1}, lr=0.01)
    run(0, 10, opt1, p1)
    saved_param = p1.data.copy()
    saved_state = {k: v.copy() for k, v in opt1.state_arrays().items()}
    run(10, 5, opt1, p1)

    p2 = Parameter(saved_param.copy())
    opt2 = Adam({"p": p2}, lr=0.01)
    opt2.load_state_arrays(saved_state)
    for i in range(5):
        opt2.zero_grad()
        p2.accumulate_grad(np.sin(p2.data + (10 + i)))
        opt2.step()

    np.testing.assert_array_equal(p1.data, p2.data)


def test_resume_differs_from_cold_moments():
    # dropping the moment arrays must change the trajectory, otherwise the
    # checkpoint format would not need to carry them
    p1 = Parameter(np.full(3, 2.0))
    opt1 = Adam({"p": p1}, lr=0.05)
    for _ in range(20):
        opt1.zero_grad()
        p1.accumulate_grad(2 * p1.data)
        opt1.step()
    warm = p1.data.copy()
    warm_state = opt1.state_arrays()

    a = Parameter(warm.copy())
    oa = Adam({"p": a}, lr=0.05)
    oa.load_state_arrays(warm_state)
    b = Parameter(warm.copy())
    ob = Adam({"p": b}, lr=0.05)
    for opt, p in ((oa, a), (ob, b)):
        opt.zero_grad()
        p.accumulate_grad(2 * p.data)
        opt.step()
    assert not np.array_equal(a.data, b.data)
