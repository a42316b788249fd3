"""Flow-matching path math and the backward ODE samplers."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wake.flowmatch import FlowSample, SamplerConfig, fm_loss, interpolate, sample
from wake.tensor import NumericError, ShapeError, constant


def test_interpolate_endpoints_exact():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((4, 3)).astype(np.float32)
    x1 = rng.standard_normal((4, 3)).astype(np.float32)
    assert np.array_equal(interpolate(x0, x1, 0.0).xt, x0)
    assert np.array_equal(interpolate(x0, x1, 1.0).xt, x1)


def test_interpolate_worked_example():
    s = interpolate(np.array([2.0]), np.array([6.0]), 0.25)
    assert s.xt[0] == pytest.approx(3.0)
    assert s.v_target[0] == pytest.approx(4.0)


def test_interpolate_invariants_hold():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x0 = rng.standard_normal(5).astype(np.float32)
        x1 = rng.standard_normal(5).astype(np.float32)
        t = float(rng.uniform())
        s = interpolate(x0, x1, t)
        assert np.abs(s.xt - ((1 - t) * x0 + t * x1)).max() < 1e-6
        assert np.abs(s.v_target - (x1 - x0)).max() < 1e-6


def test_interpolate_validates():
    with pytest.raises(ShapeError):
        interpolate(np.zeros(3), np.zeros(4), 0.5)
    with pytest.raises(ValueError):
        interpolate(np.zeros(3), np.zeros(3), 1.5)


def test_fm_loss_zero_iff_equal():
    v = np.random.default_rng(2).standard_normal((3, 3)).astype(np.float32)
    assert fm_loss(constant(v), v).item() == 0.0


def test_fm_loss_worked_example_mean_reduction():
    loss = fm_loss(constant(np.array([0.0, 0.0])), np.array([3.0, 4.0]))
    assert loss.item() == pytest.approx(12.5)


def test_fm_loss_matches_loop_oracle():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 5)).astype(np.float32)
    b = rng.standard_normal((4, 5)).astype(np.float32)
    expected = sum((float(x) - float(y)) ** 2 for x, y in zip(a.flat, b.flat)) / a.size
    assert fm_loss(constant(a), b).item() == pytest.approx(expected, rel=1e-6)


def test_fm_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        fm_loss(constant(np.zeros((2, 2))), np.zeros((2, 3)))


# -- sampler -----------------------------------------------------------------------


def test_constant_field_exact_for_both_methods_any_steps():
    c = np.float32(1.7)
    for method in ("euler", "heun"):
        for steps in (1, 3, 16):
            cfg = SamplerConfig(steps=steps, method=method, seed=5)
            out = sample(lambda x, t, cond: np.full_like(x, c), None, (6,), cfg)
            x1 = sample(lambda x, t, cond: np.zeros_like(x), None, (6,),
                        SamplerConfig(steps=1, method="euler", seed=5))
            assert np.abs(out - (x1 - c)).max() < 1e-5, (method, steps)


def test_single_euler_step_formula():
    cfg = SamplerConfig(steps=1, method="euler", seed=9)
    out = sample(lambda x, t, cond: 0.5 * x + t, None, (4,), cfg)
    x1 = sample(lambda x, t, cond: np.zeros_like(x), None, (4,),
                SamplerConfig(steps=1, method="euler", seed=9))
    expected = x1 - (0.5 * x1 + 1.0)
    assert np.abs(out - expected).max() < 1e-6


def test_linear_ode_matches_closed_form():
    cfg = SamplerConfig(steps=512, method="euler", seed=4)
    out = sample(lambda x, t, cond: x, None, (2000,), cfg)
    x1 = sample(lambda x, t, cond: np.zeros_like(x), None, (2000,),
                SamplerConfig(steps=1, method="euler", seed=4))
    expected = x1 * np.exp(-1.0)
    rel = np.abs(out - expected).max() / np.abs(expected).max()
    assert rel < 0.01


def test_order_of_accuracy_euler_first_heun_second():
    def err(method, steps):
        cfg = SamplerConfig(steps=steps, method=method, seed=8)
        out = sample(lambda x, t, cond: x, None, (500,), cfg)
        x1 = sample(lambda x, t, cond: np.zeros_like(x), None, (500,),
                    SamplerConfig(steps=1, method="euler", seed=8))
        return float(np.abs(out - x1 * np.exp(-1.0)).max())

    e16, e32 = err("euler", 16), err("euler", 32)
    h16, h32 = err("heun", 16), err("heun", 32)
    assert e32 < e16  # halving step size reduces error
    assert 1.5 < e16 / e32 < 2.6  # ~first order
    assert 3.0 < h16 / h32 < 5.5  # ~second order
    assert h16 < e16


def test_sampler_deterministic_per_seed():
    cfg = SamplerConfig(steps=8, method="heun", seed=123)
    a = sample(lambda x, t, cond: np.sin(x), None, (5, 5), cfg)
    b = sample(lambda x, t, cond: np.sin(x), None, (5, 5), cfg)
    assert np.array_equal(a, b)
    c = sample(lambda x, t, cond: np.sin(x), None, (5, 5),
               SamplerConfig(steps=8, method="heun", seed=124))
    assert not np.array_equal(a, c)


def test_sampler_reports_nonfinite_velocity_with_step_index():
    def bad(x, t, cond):
        return np.full_like(x, np.nan) if t < 0.6 else np.zeros_like(x)

    with pytest.raises(NumericError, match="step"):
        sample(bad, None, (3,), SamplerConfig(steps=4, method="euler", seed=0))


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(steps=0)
    with pytest.raises(ValueError):
        SamplerConfig(method="rk4")


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0))
def test_flow_sample_invariants_property(t):
    rng = np.random.default_rng(17)
    x0 = rng.standard_normal(8).astype(np.float32)
    x1 = rng.standard_normal(8).astype(np.float32)
    s = interpolate(x0, x1, t)
    assert isinstance(s, FlowSample)
    assert np.abs(s.xt - ((1 - np.float32(t)) * x0 + np.float32(t) * x1)).max() < 1e-6
