# -*- coding: utf-8 -*-
"""
几何原语与共享领域类型

提供跟踪引擎各模块共用的值类型：
- BBox / Motion：左上角坐标形式的框与逐帧位移
- Detection / Target：无ID检测与带轨迹ID的目标
- Trajectory / TrajectorySet：按帧索引的轨迹集合

内存中的坐标一律为0起始、连续值、(left, top, width, height)，
MOT 文件的1起始约定只在 dataset.mot_io 边界处转换。
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import GeometryError


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise GeometryError(f"{name} 必须是有限值: {value}")
    return value


def _require_score(score: float) -> float:
    score = _require_finite("score", score)
    if not 0.0 <= score <= 1.0:
        raise GeometryError(f"score 必须位于 [0, 1]: {score}")
    return score


# ==================== 值类型 ====================

@dataclass(frozen=True)
class BBox:
    """轴对齐框 (x, y, w, h)，单位像素，允许零面积"""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, _require_finite(name, getattr(self, name)))
        if self.w < 0 or self.h < 0:
            raise GeometryError(f"宽高不能为负: w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.x, self.y, self.w, self.h


@dataclass(frozen=True)
class Motion:
    """单个目标在一对帧之间的位移 (dx, dy, dw, dh)"""

    dx: float = 0.0
    dy: float = 0.0
    dw: float = 0.0
    dh: float = 0.0

    def __post_init__(self):
        for name in ("dx", "dy", "dw", "dh"):
            object.__setattr__(self, name, _require_finite(name, getattr(self, name)))

    def __neg__(self) -> "Motion":
        return Motion(-self.dx, -self.dy, -self.dw, -self.dh)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.dx, self.dy, self.dw, self.dh


@dataclass(frozen=True)
class Detection:
    """检测框：框 + 置信度，无ID"""

    box: BBox
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "score", _require_score(self.score))


@dataclass(frozen=True)
class Target:
    """带轨迹ID的目标"""

    box: BBox
    id: int
    score: float = 1.0
    frame: int = 0

    def __post_init__(self):
        if int(self.id) < 1:
            raise GeometryError(f"轨迹ID必须为正整数: {self.id}")
        if int(self.frame) < 0:
            raise GeometryError(f"帧索引不能为负: {self.frame}")
        object.__setattr__(self, "score", _require_score(self.score))


# ==================== 几何运算 ====================

def iou(a: BBox, b: BBox) -> float:
    """
    计算两个框的交并比

    Args:
        a: 框A
        b: 框B

    Returns:
        float: 交集面积 / 并集面积，并集为0时返回0
    """
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """
    批量计算交并比矩阵

    Args:
        boxes_a: N 个框
        boxes_b: M 个框

    Returns:
        np.ndarray: N x M 矩阵，数值与逐对调用 iou 一致
    """
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    a = np.array([bx.as_tuple() for bx in boxes_a], dtype=np.float64)
    b = np.array([bx.as_tuple() for bx in boxes_b], dtype=np.float64)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, 0][:, None], b[:, 0][None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, 1][:, None], b[:, 1][None, :])
    overlap = (iw > 0) & (ih > 0)
    inter = np.where(overlap, iw * ih, 0.0)
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        result = np.where(overlap & (union > 0), inter / np.where(union > 0, union, 1.0), 0.0)
    return result


def apply_motion(b: BBox, m: Motion) -> BBox:
    """按位移推进框，宽高下限截断为0"""
    return BBox(b.x + m.dx, b.y + m.dy, max(0.0, b.w + m.dw), max(0.0, b.h + m.dh))


def clip_to_frame(b: BBox, width: float, height: float) -> BBox:
    """
    将框裁剪到 [0, width] x [0, height]

    完全在画面外的框会退化为零面积框。
    """
    if width <= 0 or height <= 0:
        raise GeometryError(f"画面尺寸必须为正: {width}x{height}")
    x1 = min(max(b.x, 0.0), width)
    y1 = min(max(b.y, 0.0), height)
    x2 = min(max(b.x2, 0.0), width)
    y2 = min(max(b.y2, 0.0), height)
    return BBox(x1, y1, max(0.0, x2 - x1), max(0.0, y2 - y1))


# ==================== 轨迹 ====================

class Trajectory:
    """
    单条轨迹

    帧索引严格递增，允许出现空档（遮挡期间无记录）。
    """

    def __init__(self, track_id: int):
        if track_id < 1:
            raise GeometryError(f"轨迹ID必须为正整数: {track_id}")
        self.id = track_id
        self._entries: Dict[int, Tuple[BBox, float]] = {}
        self._last_frame: Optional[int] = None

    @property
    def last_frame(self) -> Optional[int]:
        return self._last_frame

    @property
    def first_frame(self) -> Optional[int]:
        return next(iter(self._entries), None)

    @property
    def frames(self) -> List[int]:
        return list(self._entries)

    def add(self, frame: int, box: BBox, score: float = 1.0) -> None:
        """追加一帧记录，帧号必须大于已有的最后一帧"""
        if self._last_frame is not None and frame <= self._last_frame:
            raise GeometryError(f"轨迹 {self.id} 帧号必须递增: {frame} <= {self._last_frame}")
        self._entries[frame] = (box, _require_score(score))
        self._last_frame = frame

    def get(self, frame: int) -> Optional[Tuple[BBox, float]]:
        return self._entries.get(frame)

    def has(self, frame: int) -> bool:
        return frame in self._entries

    def target_at(self, frame: int) -> Optional[Target]:
        entry = self._entries.get(frame)
        if entry is None:
            return None
        return Target(entry[0], self.id, entry[1], frame)

    def items(self) -> Iterator[Tuple[int, BBox, float]]:
        for frame, (box, score) in self._entries.items():
            yield frame, box, score

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, frame: int) -> bool:
        return frame in self._entries

    def __repr__(self) -> str:
        return f"Trajectory(id={self.id}, len={len(self)}, last={self._last_frame})"


class TrajectorySet:
    """
    轨迹集合

    维护 id -> Trajectory 映射和下一个可分配的ID，
    next_id 始终严格大于任何已发放的ID，ID不会被复用。
    只允许流水线单线程写入。
    """

    def __init__(self):
        self._tracks: Dict[int, Trajectory] = {}
        self.next_id: int = 1

    def new_trajectory(self, frame: int, box: BBox, score: float = 1.0) -> int:
        """用 next_id 新建一条轨迹并返回其ID"""
        track_id = self.next_id
        trajectory = Trajectory(track_id)
        trajectory.add(frame, box, score)
        self._tracks[track_id] = trajectory
        self.next_id += 1
        return track_id

    def append(self, track_id: int, frame: int, box: BBox, score: float = 1.0) -> None:
        """向已有轨迹追加记录"""
        if track_id not in self._tracks:
            raise KeyError(f"轨迹不存在: {track_id}")
        self._tracks[track_id].add(frame, box, score)

    def add_entry(self, track_id: int, frame: int, box: BBox, score: float = 1.0) -> None:
        """按给定ID写入记录（文件解析用），必要时创建轨迹并推进 next_id"""
        trajectory = self._tracks.get(track_id)
        if trajectory is None:
            trajectory = Trajectory(track_id)
            self._tracks[track_id] = trajectory
        trajectory.add(frame, box, score)
        self.next_id = max(self.next_id, track_id + 1)

    def targets_at(self, frame: int) -> List[Target]:
        """返回某帧所有目标，按ID升序"""
        result = []
        for track_id in sorted(self._tracks):
            target = self._tracks[track_id].target_at(frame)
            if target is not None:
                result.append(target)
        return result

    def without_entry_at(self, frame: int) -> List[Trajectory]:
        """返回在该帧没有记录的轨迹，按ID升序"""
        return [self._tracks[k] for k in sorted(self._tracks) if not self._tracks[k].has(frame)]

    def frames(self) -> List[int]:
        """所有出现过的帧号（升序）"""
        seen = set()
        for trajectory in self._tracks.values():
            seen.update(trajectory.frames)
        return sorted(seen)

    def to_rows(self) -> List[Tuple[int, int, float, float, float, float, float]]:
        """展开为 (frame, id, x, y, w, h, score) 行，按帧、ID排序"""
        rows = []
        for track_id, trajectory in self._tracks.items():
            for frame, box, score in trajectory.items():
                rows.append((frame, track_id, box.x, box.y, box.w, box.h, score))
        rows.sort(key=lambda r: (r[0], r[1]))
        return rows

    @property
    def ids(self) -> List[int]:
        return sorted(self._tracks)

    @property
    def num_entries(self) -> int:
        return sum(len(t) for t in self._tracks.values())

    def __getitem__(self, track_id: int) -> Trajectory:
        return self._tracks[track_id]

    def __contains__(self, track_id: int) -> bool:
        return track_id in self._tracks

    def __iter__(self) -> Iterator[Trajectory]:
        for track_id in sorted(self._tracks):
            yield self._tracks[track_id]

    def __len__(self) -> int:
        return len(self._tracks)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        return self.to_rows() == other.to_rows()

    def __repr__(self) -> str:
        return f"TrajectorySet(tracks={len(self)}, entries={self.num_entries}, next_id={self.next_id})"
