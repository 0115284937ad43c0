# -*- coding: utf-8 -*-
"""
合成序列生成

用确定的运动学生成真值轨迹、带噪声的检测和解析光流，
在没有真实数据集和光流网络的情况下检验整条流水线：

- 目标中心按恒定速度移动，宽高按 (1 + scale_rate)^k 变化
- 深度 d 的光流（t-d -> t）：t-d 时刻每个框内为该目标 d 帧的合成位移，
  框外为背景运动；框重叠处归属中心最近的目标
- 检测 = 真值框 + 高斯噪声，遮挡区间与漏检丢弃，另加泊松数量的随机误检

同一 SynthSpec 与种子的输出逐位一致。
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from dataset.mot_io import (SeqInfo, flow_file_name, write_detections, write_flow, write_ground_truth,
                            write_seqinfo)
from tracker.core import BBox, Detection, TrajectorySet, clip_to_frame, iou
from tracker.flow_tracker import FlowField, cell_slice
from tracker.pipeline import FrameBundle
from utils.errors import SpecError
from utils.log import logger


DEFAULT_RATES = (1, 3, 5, 10, 15, 20, 25, 30)

JITTER_MIN_IOU = 0.8
JITTER_MAX_DRAWS = 1000
JITTER_SCALE_RANGE = (0.85, 1.15)
JITTER_SHIFT_RANGE = 0.15


# ==================== 参数 ====================

@dataclass(frozen=True)
class SynthTarget:
    """
    单个合成目标

    box: first_frame 时刻的框
    velocity: 每帧中心位移 (vx, vy)
    scale_rate: 每帧宽高相对变化率
    occlusions: 不产生检测的帧区间 [start, end)
    last_frame: 最后出现的帧（含），None 表示持续到序列结束
    """

    box: BBox
    velocity: Tuple[float, float] = (0.0, 0.0)
    scale_rate: float = 0.0
    occlusions: Tuple[Tuple[int, int], ...] = ()
    first_frame: int = 0
    last_frame: Optional[int] = None

    def box_at(self, frame: int) -> Optional[BBox]:
        """frame 时刻的真值框，不在存活区间内时返回 None"""
        if frame < self.first_frame or (self.last_frame is not None and frame > self.last_frame):
            return None
        k = frame - self.first_frame
        factor = (1.0 + self.scale_rate) ** k
        cx, cy = self.box.center
        cx += self.velocity[0] * k
        cy += self.velocity[1] * k
        w, h = self.box.w * factor, self.box.h * factor
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)

    def occluded(self, frame: int) -> bool:
        return any(start <= frame < end for start, end in self.occlusions)


@dataclass(frozen=True)
class NoiseSpec:
    """
    检测噪声

    center_std / size_std 为相对框宽高的标准差；
    fp_rate 为每帧误检数的泊松均值。
    """

    center_std: float = 0.0
    size_std: float = 0.0
    score_range: Tuple[float, float] = (1.0, 1.0)
    fp_rate: float = 0.0
    miss_rate: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    """合成序列参数"""

    num_frames: int
    width: int = 640
    height: int = 480
    targets: Tuple[SynthTarget, ...] = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    background_motion: Tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    max_depth: int = 30
    name: str = "SYNTH"
    frame_rate: float = 30.0

    def __post_init__(self):
        if self.num_frames < 1:
            raise SpecError(f"帧数必须 >= 1: {self.num_frames}")
        if self.width <= 0 or self.height <= 0:
            raise SpecError(f"画面尺寸必须为正: {self.width}x{self.height}")
        if self.max_depth < 1:
            raise SpecError(f"max_depth 必须 >= 1: {self.max_depth}")
        if self.frame_rate <= 0:
            raise SpecError(f"帧率必须为正: {self.frame_rate}")
        noise = self.noise
        if noise.center_std < 0 or noise.size_std < 0 or noise.fp_rate < 0:
            raise SpecError("噪声参数不能为负")
        if not 0.0 <= noise.miss_rate <= 1.0:
            raise SpecError(f"miss_rate 必须位于 [0, 1]: {noise.miss_rate}")
        low, high = noise.score_range
        if not 0.0 <= low <= high <= 1.0:
            raise SpecError(f"score_range 非法: {noise.score_range}")
        if not all(math.isfinite(v) for v in self.background_motion):
            raise SpecError(f"背景运动必须是有限值: {self.background_motion}")
        for index, target in enumerate(self.targets):
            if target.box.area <= 0:
                raise SpecError(f"目标 {index} 的初始框面积必须为正")
            if target.scale_rate <= -1.0:
                raise SpecError(f"目标 {index} 的 scale_rate 必须 > -1: {target.scale_rate}")
            if not 0 <= target.first_frame < self.num_frames:
                raise SpecError(f"目标 {index} 的起始帧越界: {target.first_frame}")
            if target.last_frame is not None and target.last_frame < target.first_frame:
                raise SpecError(f"目标 {index} 的结束帧早于起始帧")
            for start, end in target.occlusions:
                if not 0 <= start < end <= self.num_frames:
                    raise SpecError(f"目标 {index} 的遮挡区间越界: [{start}, {end})")

    @property
    def seq_info(self) -> SeqInfo:
        return SeqInfo(self.name, self.width, self.height, self.frame_rate, self.num_frames)


# ==================== 解析光流 ====================

def analytic_flow(spec: SynthSpec, frame: int, depth: int) -> FlowField:
    """
    生成从 frame-depth 到 frame 的解析光流

    框内 u = dx + (dw / w) * (x - cx)，v 同理，(dx, dy, dw, dh) 为目标在这 depth 帧内的位移；
    像素按单元中心判断归属。

    Raises:
        SpecError: 深度或帧号越界
    """
    if depth < 1 or frame - depth < 0 or frame >= spec.num_frames:
        raise SpecError(f"光流帧号越界: frame={frame}, depth={depth}")
    bu, bv = spec.background_motion
    u = np.full((spec.height, spec.width), bu * depth, dtype=np.float64)
    v = np.full((spec.height, spec.width), bv * depth, dtype=np.float64)
    nearest = np.full((spec.height, spec.width), np.inf)

    for target in spec.targets:
        src = target.box_at(frame - depth)
        dst = target.box_at(frame)
        if src is None or dst is None:
            continue
        rows, cols = cell_slice(spec.width, spec.height, src.x, src.y, src.x2, src.y2)
        if rows.start == rows.stop or cols.start == cols.stop:
            continue
        cx, cy = src.center
        x_off = np.arange(cols.start, cols.stop, dtype=np.float64) + 0.5 - cx
        y_off = np.arange(rows.start, rows.stop, dtype=np.float64) + 0.5 - cy
        dist = x_off[None, :] ** 2 + y_off[:, None] ** 2
        owned = dist < nearest[rows, cols]

        field_u = (dst.x - src.x) + (dst.w - src.w) / src.w * x_off[None, :]
        field_v = (dst.y - src.y) + (dst.h - src.h) / src.h * y_off[:, None]
        u[rows, cols] = np.where(owned, np.broadcast_to(field_u, dist.shape), u[rows, cols])
        v[rows, cols] = np.where(owned, np.broadcast_to(field_v, dist.shape), v[rows, cols])
        nearest[rows, cols] = np.where(owned, dist, nearest[rows, cols])
    return FlowField(spec.width, spec.height, u, v)


class AnalyticFlowMap(Mapping):
    """某一帧的 回溯深度 -> 解析光流，访问时才计算"""

    def __init__(self, spec: SynthSpec, frame: int):
        self._spec = spec
        self._frame = frame
        self._depths = list(range(2, min(spec.max_depth, frame) + 1))

    def __getitem__(self, depth: int) -> FlowField:
        if depth not in self._depths:
            raise KeyError(depth)
        return analytic_flow(self._spec, self._frame, depth)

    def __iter__(self):
        return iter(self._depths)

    def __len__(self) -> int:
        return len(self._depths)


class SynthBundles(Sequence):
    """逐帧输入的惰性序列，光流在取用时生成"""

    def __init__(self, spec: SynthSpec, detections: Mapping[int, List[Detection]]):
        self._spec = spec
        self._detections = detections

    def __getitem__(self, frame):
        if isinstance(frame, slice):
            return [self[i] for i in range(*frame.indices(len(self)))]
        if frame < 0:
            frame += len(self)
        if not 0 <= frame < len(self):
            raise IndexError(frame)
        flow = analytic_flow(self._spec, frame, 1) if frame > 0 else None
        return FrameBundle(frame, flow, AnalyticFlowMap(self._spec, frame),
                           list(self._detections.get(frame, [])))

    def __len__(self) -> int:
        return self._spec.num_frames


# ==================== 生成 ====================

@dataclass
class SynthSequence:
    """generate 的输出"""

    spec: SynthSpec
    gt: TrajectorySet
    detections: Dict[int, List[Detection]]
    bundles: SynthBundles

    @property
    def seq_info(self) -> SeqInfo:
        return self.spec.seq_info

    @property
    def name(self) -> str:
        return self.spec.name


def _noisy_box(rng: np.random.Generator, box: BBox, noise: NoiseSpec) -> BBox:
    if noise.center_std == 0 and noise.size_std == 0:
        return box
    dcx, dcy, dw, dh = rng.normal(0.0, 1.0, 4)
    w = max(1.0, box.w * (1.0 + noise.size_std * dw))
    h = max(1.0, box.h * (1.0 + noise.size_std * dh))
    cx, cy = box.center
    cx += noise.center_std * box.w * dcx
    cy += noise.center_std * box.h * dcy
    return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _score(rng: np.random.Generator, noise: NoiseSpec) -> float:
    low, high = noise.score_range
    return low if low == high else float(rng.uniform(low, high))


def _false_positive(rng: np.random.Generator, spec: SynthSpec) -> BBox:
    w = float(rng.uniform(8.0, 40.0))
    h = 2.0 * w
    x = float(rng.uniform(0.0, max(1.0, spec.width - w)))
    y = float(rng.uniform(0.0, max(1.0, spec.height - h)))
    return BBox(x, y, w, h)


def generate(spec: SynthSpec) -> SynthSequence:
    """
    生成一段合成序列

    Returns:
        SynthSequence: 真值轨迹、逐帧检测与惰性的逐帧输入
    """
    rng = np.random.default_rng(spec.seed)
    noise = spec.noise
    gt = TrajectorySet()
    detections: Dict[int, List[Detection]] = {}

    for target in spec.targets:
        track_id = gt.next_id
        gt.next_id += 1
        last = spec.num_frames - 1 if target.last_frame is None else min(target.last_frame, spec.num_frames - 1)
        for frame in range(target.first_frame, last + 1):
            gt.add_entry(track_id, frame, target.box_at(frame), 1.0)

    for frame in range(spec.num_frames):
        frame_dets = []
        for target in spec.targets:
            box = target.box_at(frame)
            if box is None or target.occluded(frame):
                continue
            if noise.miss_rate > 0 and rng.random() < noise.miss_rate:
                continue
            noisy = clip_to_frame(_noisy_box(rng, box, noise), spec.width, spec.height)
            if noisy.area > 0:
                frame_dets.append(Detection(noisy, _score(rng, noise)))
        if noise.fp_rate > 0:
            for _ in range(int(rng.poisson(noise.fp_rate))):
                frame_dets.append(Detection(_false_positive(rng, spec), _score(rng, noise)))
        if frame_dets:
            detections[frame] = frame_dets

    logger.debug("合成序列生成完成", name=spec.name, frames=spec.num_frames, targets=len(spec.targets),
                 detections=sum(len(v) for v in detections.values()))
    return SynthSequence(spec, gt, detections, SynthBundles(spec, detections))


def save_synth_sequence(sequence: SynthSequence, out_dir: str, flow_depth: int = 1) -> Path:
    """
    按 MOTChallenge 布局保存合成序列

    <out_dir>/<name>/seqinfo.ini, det/det.txt, gt/gt.txt, flow/<t>_<t-d>.flo（d = 1..flow_depth）

    Returns:
        Path: 序列目录
    """
    root = Path(out_dir) / sequence.name
    (root / "det").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    (root / "flow").mkdir(parents=True, exist_ok=True)
    (root / "seqinfo.ini").write_text(write_seqinfo(sequence.seq_info), encoding="utf-8")
    (root / "det" / "det.txt").write_text(write_detections(sequence.detections), encoding="utf-8")
    (root / "gt" / "gt.txt").write_text(write_ground_truth(sequence.gt), encoding="utf-8")
    written = 0
    for frame in range(1, sequence.spec.num_frames):
        for depth in range(1, min(flow_depth, frame) + 1):
            data = write_flow(analytic_flow(sequence.spec, frame, depth))
            (root / "flow" / flow_file_name(frame, depth)).write_bytes(data)
            written += 1
    logger.info("合成序列已保存", path=str(root), flows=written)
    return root


# ==================== 数据增强 ====================

def jitter_candidate(b: BBox, scale_w: float, scale_h: float, shift_x: float, shift_y: float) -> BBox:
    """按给定比例缩放宽高、并把中心平移 shift * 宽/高"""
    w, h = b.w * scale_w, b.h * scale_h
    x = b.x + (b.w - w) / 2.0 + shift_x * b.w
    y = b.y + (b.h - h) / 2.0 + shift_y * b.h
    return BBox(x, y, w, h)


class BoxJitter:
    """
    框抖动（拒绝采样）

    宽高比例取自 scale_range，中心偏移比例取自 [-shift_range, shift_range]，
    直到与原框 IoU > 0.8；超过 max_draws 次仍不满足时返回原框并计数。
    """

    def __init__(self, seed: int = 0, max_draws: int = JITTER_MAX_DRAWS,
                 scale_range: Tuple[float, float] = JITTER_SCALE_RANGE,
                 shift_range: float = JITTER_SHIFT_RANGE):
        self._rng = np.random.default_rng(seed)
        self.max_draws = max_draws
        self.scale_range = scale_range
        self.shift_range = shift_range
        self.draws = 0
        self.fallbacks = 0

    def jitter(self, b: BBox) -> BBox:
        if b.area <= 0:
            return b
        for _ in range(self.max_draws):
            scale_w, scale_h = self._rng.uniform(self.scale_range[0], self.scale_range[1], 2)
            shift_x, shift_y = self._rng.uniform(-self.shift_range, self.shift_range, 2)
            self.draws += 1
            candidate = jitter_candidate(b, float(scale_w), float(scale_h), float(shift_x), float(shift_y))
            if iou(b, candidate) > JITTER_MIN_IOU:
                return candidate
        self.fallbacks += 1
        logger.warning("抖动采样次数耗尽，返回原框", box=b.as_tuple(), draws=self.max_draws)
        return b


def jitter(b: BBox, seed: int) -> BBox:
    """对单个框做一次抖动"""
    return BoxJitter(seed).jitter(b)


def pair_sampling(num_frames: int, rates: Sequence[int] = DEFAULT_RATES) -> List[Tuple[int, int]]:
    """
    多采样率帧对

    Returns:
        List[Tuple[int, int]]: 按采样率、再按起始帧排列的 (t, t + rate)
    """
    pairs = []
    for rate in rates:
        pairs.extend((t, t + rate) for t in range(max(0, num_frames - rate)))
    return pairs


# ==================== 测试集 ====================

SUITE_WIDTH = 320
SUITE_HEIGHT = 256
SUITE_LANE = 32
SUITE_BOX = (10.0, 20.0)
SUITE_GAP_RANGE = (1, 5)


def _lane_targets(rng: np.random.Generator, num_targets: int, num_frames: int) -> List[SynthTarget]:
    lanes = SUITE_HEIGHT // SUITE_LANE
    if num_targets > lanes:
        raise SpecError(f"目标数超过可用车道数: {num_targets} > {lanes}")
    w, h = SUITE_BOX
    # 保证整段序列内目标不出画面
    max_speed = min(0.8, 90.0 / max(1, num_frames))
    targets = []
    for lane in range(num_targets):
        x0 = float(rng.integers(90, 221))
        y0 = float(lane * SUITE_LANE + 6)
        vx = round(float(rng.uniform(-max_speed, max_speed)), 2)
        vy = round(float(rng.uniform(-0.03, 0.03)), 2)
        targets.append(SynthTarget(BBox(x0, y0, w, h), velocity=(vx, vy)))
    return targets


def clean_suite(num_sequences: int = 5, num_targets: int = 8, num_frames: int = 100,
                seed: int = 0) -> List[SynthSpec]:
    """无噪声、无遮挡的序列组，目标各占一条互不重叠的车道"""
    specs = []
    for index in range(num_sequences):
        rng = np.random.default_rng([seed, index])
        specs.append(SynthSpec(num_frames, SUITE_WIDTH, SUITE_HEIGHT,
                               tuple(_lane_targets(rng, num_targets, num_frames)),
                               seed=seed + index, name=f"SYNTH-{index + 1:02d}"))
    return specs


def _gaps(rng: np.random.Generator, num_frames: int) -> Tuple[Tuple[int, int], ...]:
    """每个目标 1~2 段遮挡，长度 1~5 帧，开始 >= 5，结束 <= num_frames - 2"""
    lo, hi = SUITE_GAP_RANGE
    segments = 2 if num_frames >= 30 else 1
    span = (num_frames - 2 - 5) // segments
    gaps = []
    for k in range(segments):
        seg_start = 5 + k * span
        length = int(rng.integers(lo, hi + 1))
        latest = seg_start + span - length - 1
        if latest < seg_start:
            continue
        start = int(rng.integers(seg_start, latest + 1))
        gaps.append((start, start + length))
    return tuple(gaps)


def occlusion_suite(num_sequences: int = 5, num_targets: int = 8, num_frames: int = 100,
                    seed: int = 0) -> List[SynthSpec]:
    """在 clean_suite 的基础上为每个目标加入短时遮挡（检测缺失）"""
    specs = []
    for index, base in enumerate(clean_suite(num_sequences, num_targets, num_frames, seed)):
        rng = np.random.default_rng([seed, index, 1])
        targets = tuple(SynthTarget(t.box, t.velocity, t.scale_rate, _gaps(rng, num_frames))
                        for t in base.targets)
        specs.append(SynthSpec(num_frames, base.width, base.height, targets,
                               seed=base.seed, name=f"OCCL-{index + 1:02d}"))
    return specs
