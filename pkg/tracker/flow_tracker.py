# -*- coding: utf-8 -*-
"""
目标光流模块

从两帧之间的稠密光流场中联合估计任意数量目标的位移：
- 平移：收缩后框内光流向量的分量中位数
- 尺度（affine_fit）：flow-u 对像素 x 偏移、flow-v 对 y 偏移的最小二乘直线，
  斜率乘以宽/高得到 dw/dh，截距作为 dx/dy

采样规则：只取中心点落在区域内的网格单元，不做双线性插值。
"""

import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from tracker.core import BBox, Motion, Target, apply_motion, clip_to_frame
from utils.errors import ConfigError, LengthMismatch, NonFiniteValue, TooFewSamples
from utils.log import logger


ScaleMode = Literal["none", "affine_fit"]
SCALE_MODES = ("none", "affine_fit")


@dataclass(frozen=True, eq=False)
class FlowField:
    """
    稠密光流场

    u / v 均为 height x width 的行主序网格，单位为像素/帧对。
    """

    width: int
    height: int
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64)
        shape = (int(self.height), int(self.width))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"光流尺寸必须为正: {self.width}x{self.height}")
        if u.shape != shape or v.shape != shape:
            raise ValueError(f"光流网格尺寸不符: u{u.shape} v{v.shape}, 期望 {shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise NonFiniteValue("光流场中存在非有限值")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "width", shape[1])
        object.__setattr__(self, "height", shape[0])
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def uniform(cls, width: int, height: int, u: float = 0.0, v: float = 0.0) -> "FlowField":
        """构造常量光流场"""
        return cls(width, height, np.full((height, width), float(u)), np.full((height, width), float(v)))

    def with_offset(self, du: float, dv: float) -> "FlowField":
        """返回每个向量都加上 (du, dv) 的新光流场"""
        return FlowField(self.width, self.height, self.u + du, self.v + dv)

    def cell_slice(self, x0: float, y0: float, x1: float, y1: float) -> Tuple[slice, slice]:
        return cell_slice(self.width, self.height, x0, y0, x1, y1)


def cell_slice(width: int, height: int, x0: float, y0: float, x1: float, y1: float) -> Tuple[slice, slice]:
    """
    返回中心点落在 [x0, x1) x [y0, y1) 内的网格单元切片

    Returns:
        Tuple[slice, slice]: (行切片, 列切片)
    """
    c0 = max(0, math.ceil(x0 - 0.5))
    c1 = min(width, math.ceil(x1 - 0.5))
    r0 = max(0, math.ceil(y0 - 0.5))
    r1 = min(height, math.ceil(y1 - 0.5))
    return slice(r0, max(r0, r1)), slice(c0, max(c0, c1))


@dataclass(frozen=True)
class MotionEstimatorConfig:
    """运动估计参数"""

    inner_margin_ratio: float = 0.1
    min_pixels: int = 16
    scale_mode: ScaleMode = "affine_fit"

    def __post_init__(self):
        if not 0.0 <= self.inner_margin_ratio < 0.5:
            raise ConfigError(f"inner_margin_ratio 必须位于 [0, 0.5): {self.inner_margin_ratio}")
        if int(self.min_pixels) < 1:
            raise ConfigError(f"min_pixels 必须为正整数: {self.min_pixels}")
        if self.scale_mode not in SCALE_MODES:
            raise ConfigError(f"未知的 scale_mode: {self.scale_mode}")


def _fit_line(offsets: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    """最小二乘拟合 values = intercept + slope * offsets，返回 (intercept, slope)"""
    if np.ptp(offsets) == 0:
        # 只有一列/一行时斜率不可辨识
        return float(np.median(values)), 0.0
    design = np.column_stack([np.ones_like(offsets), offsets])
    (intercept, slope), *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(intercept), float(slope)


def pool_motion(flow: FlowField, b: BBox, cfg: MotionEstimatorConfig) -> Motion:
    """
    在框内汇聚光流得到目标位移

    Args:
        flow: 上一帧到当前帧的光流场
        b: 上一帧中的目标框（应已裁剪到画面内）
        cfg: 运动估计参数

    Returns:
        Motion: 目标位移

    Raises:
        TooFewSamples: 收缩后的框覆盖的网格单元少于 min_pixels
    """
    mx = cfg.inner_margin_ratio * b.w
    my = cfg.inner_margin_ratio * b.h
    rows, cols = flow.cell_slice(b.x + mx, b.y + my, b.x2 - mx, b.y2 - my)
    u = flow.u[rows, cols]
    v = flow.v[rows, cols]
    if u.size < cfg.min_pixels:
        raise TooFewSamples(int(u.size), cfg.min_pixels)

    if cfg.scale_mode == "none":
        return Motion(float(np.median(u)), float(np.median(v)), 0.0, 0.0)

    cx, cy = b.center
    x_off = np.arange(cols.start, cols.stop, dtype=np.float64) + 0.5 - cx
    y_off = np.arange(rows.start, rows.stop, dtype=np.float64) + 0.5 - cy
    x_grid = np.broadcast_to(x_off[None, :], u.shape).ravel()
    y_grid = np.broadcast_to(y_off[:, None], v.shape).ravel()
    dx, slope_x = _fit_line(x_grid, u.ravel())
    dy, slope_y = _fit_line(y_grid, v.ravel())
    return Motion(dx, dy, slope_x * b.w, slope_y * b.h)


def flow_targets(flow: FlowField, targets: Sequence[Target], cfg: MotionEstimatorConfig,
                 frame: Optional[int] = None) -> List[Target]:
    """
    用光流把一组目标推进到下一帧

    Args:
        flow: 光流场
        targets: 带ID的目标
        cfg: 运动估计参数
        frame: 输出目标的帧号，为 None 时使用 target.frame + 1

    Returns:
        List[Target]: 顺序、ID、分数与输入一致
    """
    moved = []
    fallbacks = 0
    for target in targets:
        box = clip_to_frame(target.box, flow.width, flow.height)
        try:
            motion = pool_motion(flow, box, cfg)
        except TooFewSamples:
            motion = Motion()
            fallbacks += 1
        new_box = clip_to_frame(apply_motion(box, motion), flow.width, flow.height)
        out_frame = target.frame + 1 if frame is None else frame
        moved.append(Target(new_box, target.id, target.score, out_frame))
    if fallbacks:
        logger.debug("部分目标采样不足，使用零运动", fallbacks=fallbacks, targets=len(targets))
    return moved


def motion_regression_error(predicted: Sequence[Motion], truth: Sequence[Motion]) -> float:
    """
    运动回归误差：堆叠差值矩阵的 Frobenius 范数平方

    Raises:
        LengthMismatch: 两个序列长度不同
    """
    if len(predicted) != len(truth):
        raise LengthMismatch(f"序列长度不一致: {len(predicted)} != {len(truth)}")
    if not predicted:
        return 0.0
    diff = np.array([p.as_tuple() for p in predicted]) - np.array([t.as_tuple() for t in truth])
    return float(np.sum(diff * diff))
