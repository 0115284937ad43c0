# -*- coding: utf-8 -*-
"""
候选框精修器

精修器接收某帧的一组候选框，为每个候选返回 (精修后的框, [0,1] 置信度)，
输出长度与顺序必须与输入一致。内置三种实现：
- IdentityRefiner：框不变，分数沿用候选自带分数，无分数时为 1.0
- FileRefiner：回放离线精修结果（按 IoU >= 0.7 的最近邻匹配）
- OverlapRefiner：跟踪候选分数取其与本帧检测的最大 IoU，检测沿用原分数

所有实现只读，可被多个线程同时使用。
"""

from dataclasses import dataclass
from typing import List, Mapping, Optional, Protocol, Sequence, Tuple

from tracker.core import BBox, Detection, iou
from utils.errors import ConfigError


FILE_MATCH_IOU = 0.7


@dataclass(frozen=True)
class Proposal:
    """待精修的候选框，track_id 为 None 表示来自检测"""

    box: BBox
    score: Optional[float] = None
    track_id: Optional[int] = None


Refined = Tuple[BBox, float]


class Refiner(Protocol):
    """精修器接口"""

    name: str

    def refine(self, frame: int, proposals: Sequence[Proposal]) -> List[Refined]:
        ...


class IdentityRefiner:
    """恒等精修：不改框，检测沿用原分数，跟踪候选记 1.0"""

    name = "identity"

    def refine(self, frame: int, proposals: Sequence[Proposal]) -> List[Refined]:
        return [(p.box, 1.0 if p.score is None else p.score) for p in proposals]


class OverlapRefiner:
    """
    重叠启发式精修

    跟踪候选的分数为其与本帧检测框的最大 IoU，本帧无检测时为 0，
    因此没有检测支撑的跟踪框会被淘汰。检测候选沿用自带分数。
    """

    name = "overlap"

    def __init__(self, detections: Mapping[int, Sequence[Detection]]):
        self._detections = detections

    def refine(self, frame: int, proposals: Sequence[Proposal]) -> List[Refined]:
        boxes = [d.box for d in self._detections.get(frame, ())]
        refined = []
        for p in proposals:
            if p.track_id is None and p.score is not None:
                refined.append((p.box, p.score))
                continue
            score = max((iou(p.box, b) for b in boxes), default=0.0)
            refined.append((p.box, min(1.0, score)))
        return refined


class FileRefiner:
    """
    回放离线精修结果

    每帧的精修框与候选按 IoU 最近邻匹配，IoU >= 0.7 时采用文件中的框和分数，
    否则候选分数记为 0（被淘汰）。
    """

    name = "file"

    def __init__(self, refinements: Mapping[int, Sequence[Detection]], source: str = ""):
        self._refinements = refinements
        self.source = source

    def refine(self, frame: int, proposals: Sequence[Proposal]) -> List[Refined]:
        rows = self._refinements.get(frame, ())
        refined = []
        for p in proposals:
            best: Optional[Detection] = None
            best_iou = -1.0
            for row in rows:
                overlap = iou(p.box, row.box)
                if overlap >= FILE_MATCH_IOU and overlap > best_iou:
                    best, best_iou = row, overlap
            if best is None:
                refined.append((p.box, 0.0))
            else:
                refined.append((best.box, best.score))
        return refined


def build_refiner(spec: str, detections: Optional[Mapping[int, Sequence[Detection]]] = None) -> Refiner:
    """
    根据命令行/配置字符串构造精修器

    Args:
        spec: identity | overlap | file:<path>
        detections: 按帧的检测（overlap 需要）

    Returns:
        Refiner: 精修器实例

    Raises:
        ConfigError: 未知类型或缺少必要输入
    """
    if spec == "identity":
        return IdentityRefiner()
    if spec == "overlap":
        if detections is None:
            raise ConfigError("overlap 精修器需要本序列的检测结果")
        return OverlapRefiner(detections)
    if spec.startswith("file:"):
        from dataset.mot_io import parse_refinements, read_text_file

        path = spec[len("file:"):]
        if not path:
            raise ConfigError("file 精修器缺少路径: file:<path>")
        try:
            text = read_text_file(path)
        except OSError as e:
            raise ConfigError(f"无法读取精修文件: {path}: {e}") from e
        return FileRefiner(parse_refinements(text), source=path)
    raise ConfigError(f"未知的精修器: {spec}")
