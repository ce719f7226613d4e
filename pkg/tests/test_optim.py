import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egopnr.errors import ConfigError, NumericError
from egopnr.optim import AdamWState, OptimConfig, adamw_step, layer_lr_scale, lr_at, scaled_base_lr

CFG = OptimConfig()
SPE = 10  # steps per epoch


@pytest.mark.parametrize("bs, expected", [(32, 6.25e-5), (256, 5e-4), (8, 1.5625e-5)])
def test_linear_scaling(bs, expected):
    assert scaled_base_lr(OptimConfig(batch_size=bs)) == pytest.approx(expected, abs=1e-15)


def test_schedule_anchor_points():
    peak = 6.25e-5
    warm = 5 * SPE
    total = 100 * SPE
    assert abs(lr_at(0, SPE, CFG) - 1e-6) < 1e-12
    assert abs(lr_at(warm, SPE, CFG) - peak) < 1e-12
    assert abs(lr_at(warm + (total - warm) // 2, SPE, CFG) - peak / 2) < 1e-12
    assert lr_at(total, SPE, CFG) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(total + 50, SPE, CFG) == lr_at(total, SPE, CFG)


def test_schedule_continuity_and_monotone():
    warm = 5 * SPE
    slope = (scaled_base_lr(CFG) - CFG.warmup_lr) / warm
    assert abs(lr_at(warm - 1, SPE, CFG) + slope - lr_at(warm, SPE, CFG)) < 1e-12
    up = [lr_at(s, SPE, CFG) for s in range(warm + 1)]
    down = [lr_at(s, SPE, CFG) for s in range(warm, 100 * SPE + 1)]
    assert all(a < b for a, b in zip(up, up[1:]))
    assert all(a >= b for a, b in zip(down, down[1:]))


def test_schedule_min_lr_floor():
    cfg = OptimConfig(min_lr=1e-6)
    assert lr_at(100 * SPE, SPE, cfg) == pytest.approx(1e-6, abs=1e-15)


def test_negative_step():
    with pytest.raises(ConfigError):
        lr_at(-1, SPE, CFG)


def test_layer_scale_examples():
    assert layer_lr_scale(4, 4, 0.75) == 1.0
    assert layer_lr_scale(3, 4, 0.75) == 0.75
    assert abs(layer_lr_scale(0, 4, 0.75) - 0.31640625) < 1e-12
    scales = [layer_lr_scale(i, 6, 0.75) for i in range(7)]
    assert scales == sorted(scales)
    with pytest.raises(ConfigError):
        layer_lr_scale(5, 4, 0.75)


def _one(value, grad, lr, wd, state=None):
    p = {"w": np.array([value])}
    state = state or AdamWState.zeros_like(p)
    adamw_step(p, {"w": np.array([grad])}, state, lr, OptimConfig(weight_decay=wd))
    return p["w"][0], state


def test_first_step_oracle():
    value, _ = _one(1.0, 1.0, 0.1, 0.0)
    assert abs(value - 0.9) < 1e-6
    assert value == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_zero_grad_fixed_point():
    value, _ = _one(1.7, 0.0, 0.1, 0.0)
    assert value == 1.7


def test_decay_only():
    value, _ = _one(2.0, 0.0, 0.1, 0.05)
    assert value == pytest.approx(2.0 * (1 - 0.005), abs=1e-15)


def test_decay_mask_and_scales():
    p = {"a": np.ones(3), "b": np.ones(3)}
    g = {"a": np.zeros(3), "b": np.zeros(3)}
    adamw_step(p, g, AdamWState.zeros_like(p), 0.1, CFG,
               lr_scales={"a": 0.5, "b": 1.0}, decay_mask={"a": True, "b": False})
    np.testing.assert_allclose(p["a"], 1 - 0.5 * 0.1 * 0.05)
    np.testing.assert_array_equal(p["b"], 1.0)


def test_non_finite_gradient():
    p = {"w": np.ones(2)}
    with pytest.raises(NumericError, match="w"):
        adamw_step(p, {"w": np.array([1.0, np.inf])}, AdamWState.zeros_like(p), 0.1, CFG)
    assert p["w"].tolist() == [1.0, 1.0]


@settings(max_examples=100, deadline=None)
@given(g=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       p0=st.lists(st.floats(-5, 5), min_size=3, max_size=3), steps=st.integers(1, 4))
def test_odd_symmetry(g, p0, steps):
    cfg = OptimConfig(weight_decay=0.0)
    a = {"w": np.array(p0)}
    b = {"w": -np.array(p0)}
    sa, sb = AdamWState.zeros_like(a), AdamWState.zeros_like(b)
    for k in range(steps):
        grad = np.array(g) * (k + 1)
        adamw_step(a, {"w": grad}, sa, 0.01, cfg)
        adamw_step(b, {"w": -grad}, sb, 0.01, cfg)
    np.testing.assert_allclose(a["w"], -b["w"], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(g=st.floats(0.01, 100).map(float) | st.floats(-100, -0.01), lr=st.floats(1e-4, 1.0))
def test_bias_corrected_first_step(g, lr):
    value, _ = _one(0.0, g, lr, 0.0)
    expected = -math.copysign(1.0, g) * lr / (1 + 1e-8 * math.sqrt(1 / (1 - 0.999)))
    assert abs(value - expected) < 1e-6


def test_config_validation():
    with pytest.raises(ConfigError):
        OptimConfig(betas=(1.0, 0.9)).validate()
    with pytest.raises(ConfigError):
        OptimConfig(warmup_epochs=200).validate()
    with pytest.raises(ConfigError):
        OptimConfig(layer_decay=0).validate()
