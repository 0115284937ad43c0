# -*- coding: utf-8 -*-

import numpy as np
import pytest

from tracker.core import BBox, Motion, Target
from tracker.flow_tracker import (FlowField, MotionEstimatorConfig, flow_targets, motion_regression_error,
                                  pool_motion)
from utils.errors import ConfigError, LengthMismatch, NonFiniteValue, TooFewSamples


AFFINE = MotionEstimatorConfig()
MEDIAN = MotionEstimatorConfig(scale_mode="none")


def linear_field(width, height, a_u, b_u, a_v, b_v, cx, cy):
    """u = a_u + b_u (x - cx), v = a_v + b_v (y - cy)，在单元中心取值"""
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    u = np.broadcast_to(a_u + b_u * (xs[None, :] - cx), (height, width))
    v = np.broadcast_to(a_v + b_v * (ys[:, None] - cy), (height, width))
    return FlowField(width, height, u, v)


def test_flow_field_validation():
    with pytest.raises(ValueError):
        FlowField(2, 2, np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(NonFiniteValue):
        FlowField(1, 1, np.array([[np.nan]]), np.zeros((1, 1)))


def test_flow_field_is_read_only():
    field = FlowField.uniform(4, 3, 1.0, 2.0)
    with pytest.raises(ValueError):
        field.u[0, 0] = 5.0


def test_config_validation():
    with pytest.raises(ConfigError):
        MotionEstimatorConfig(inner_margin_ratio=0.5)
    with pytest.raises(ConfigError):
        MotionEstimatorConfig(min_pixels=0)
    with pytest.raises(ConfigError):
        MotionEstimatorConfig(scale_mode="bogus")


@pytest.mark.parametrize("cfg", [AFFINE, MEDIAN])
def test_uniform_field_translation(cfg):
    motion = pool_motion(FlowField.uniform(64, 64, 3.0, -2.0), BBox(10, 10, 20, 20), cfg)
    assert motion.as_tuple() == pytest.approx((3.0, -2.0, 0.0, 0.0), abs=1e-9)


def test_zero_field():
    motion = pool_motion(FlowField.uniform(64, 64), BBox(10, 10, 20, 20), AFFINE)
    assert motion.as_tuple() == pytest.approx((0.0, 0.0, 0.0, 0.0), abs=1e-12)


def test_dilation_recovers_size_change():
    box = BBox(20, 20, 40, 20)
    cx, cy = box.center
    field = linear_field(100, 80, 0.0, 0.1, 0.0, 0.1, cx, cy)
    motion = pool_motion(field, box, AFFINE)
    assert motion.as_tuple() == pytest.approx((0.0, 0.0, 4.0, 2.0), abs=1e-6)


def test_affine_field_parameters_recovered():
    rng = np.random.default_rng(5)
    for _ in range(50):
        box = BBox(*rng.uniform(5, 40, 2), *rng.uniform(12, 40, 2))
        cx, cy = box.center
        a_u, b_u, a_v, b_v = rng.uniform(-3, 3), rng.uniform(-0.2, 0.2), rng.uniform(-3, 3), rng.uniform(-0.2, 0.2)
        field = linear_field(100, 100, a_u, b_u, a_v, b_v, cx, cy)
        motion = pool_motion(field, box, AFFINE)
        expected = (a_u, a_v, b_u * box.w, b_v * box.h)
        assert motion.as_tuple() == pytest.approx(expected, abs=1e-6)
        # 此类场上回归误差为 0
        assert motion_regression_error([motion], [Motion(*expected)]) == pytest.approx(0.0, abs=1e-10)


def test_constant_offset_equivariance():
    rng = np.random.default_rng(9)
    base = FlowField(50, 40, rng.normal(0, 1, (40, 50)), rng.normal(0, 1, (40, 50)))
    box = BBox(8, 6, 24, 20)
    for cfg in (AFFINE, MEDIAN):
        plain = pool_motion(base, box, cfg)
        shifted = pool_motion(base.with_offset(2.5, -1.25), box, cfg)
        assert shifted.dx == pytest.approx(plain.dx + 2.5, abs=1e-9)
        assert shifted.dy == pytest.approx(plain.dy - 1.25, abs=1e-9)
        assert shifted.dw == pytest.approx(plain.dw, abs=1e-9)
        assert shifted.dh == pytest.approx(plain.dh, abs=1e-9)


def test_median_is_robust_to_minority_corruption():
    rng = np.random.default_rng(2)
    u = np.full((40, 40), 1.0)
    v = np.full((40, 40), -1.0)
    box = BBox(0, 0, 40, 40)
    # 收缩后采样区域为 [4, 36) x [4, 36)，共 1024 个单元；污染其中不到一半
    corrupt = rng.choice(32 * 32, size=400, replace=False)
    rows, cols = np.unravel_index(corrupt, (32, 32))
    u[rows + 4, cols + 4] = rng.uniform(-1e6, 1e6, 400)
    v[rows + 4, cols + 4] = rng.uniform(-1e6, 1e6, 400)
    motion = pool_motion(FlowField(40, 40, u, v), box, MEDIAN)
    assert (motion.dx, motion.dy) == (1.0, -1.0)


def test_too_few_samples():
    with pytest.raises(TooFewSamples) as info:
        pool_motion(FlowField.uniform(64, 64, 1.0, 1.0), BBox(10, 10, 3, 3), AFFINE)
    assert info.value.required == 16


def test_flow_targets_empty():
    assert flow_targets(FlowField.uniform(10, 10), [], AFFINE) == []


def test_flow_targets_uniform_shift_keeps_id_and_score():
    target = Target(BBox(10, 10, 20, 20), 4, 0.7, frame=2)
    (moved,) = flow_targets(FlowField.uniform(64, 64, 3.0, -2.0), [target], AFFINE)
    assert moved.id == 4
    assert moved.score == 0.7
    assert moved.frame == 3
    assert moved.box.as_tuple() == pytest.approx((13.0, 8.0, 20.0, 20.0), abs=1e-9)


def test_flow_targets_piecewise_field():
    u = np.zeros((40, 80))
    u[:, :40] = 5.0
    u[:, 40:] = -5.0
    field = FlowField(80, 40, u, np.zeros((40, 80)))
    left = Target(BBox(5, 5, 20, 20), 1)
    right = Target(BBox(50, 5, 20, 20), 2)
    moved = flow_targets(field, [left, right], MEDIAN, frame=1)
    assert [t.id for t in moved] == [1, 2]
    assert moved[0].box.x == pytest.approx(10.0)
    assert moved[1].box.x == pytest.approx(45.0)


def test_flow_targets_falls_back_to_zero_motion():
    tiny = Target(BBox(10, 10, 2, 2), 1)
    (moved,) = flow_targets(FlowField.uniform(64, 64, 3.0, 3.0), [tiny], AFFINE)
    assert moved.box.as_tuple() == (10.0, 10.0, 2.0, 2.0)


def test_flow_targets_clips_to_frame():
    target = Target(BBox(50, 10, 20, 20), 1)
    (moved,) = flow_targets(FlowField.uniform(64, 64, 10.0, 0.0), [target], AFFINE)
    assert moved.box.x2 <= 64.0


@pytest.mark.parametrize("predicted, truth, expected", [
    ([Motion(1, 2, 3, 4)], [Motion(1, 2, 3, 4)], 0.0),
    ([Motion(1, 1, 0, 0)], [Motion()], 2.0),
    ([Motion(1, 0, 0, 0), Motion(0, 2, 0, 0)], [Motion(), Motion()], 5.0),
])
def test_motion_regression_error(predicted, truth, expected):
    assert motion_regression_error(predicted, truth) == pytest.approx(expected)


def test_motion_regression_error_length_mismatch():
    with pytest.raises(LengthMismatch):
        motion_regression_error([Motion()], [])
