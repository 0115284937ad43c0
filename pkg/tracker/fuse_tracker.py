# -*- coding: utf-8 -*-
"""
目标融合模块

把光流推进得到的跟踪候选与检测候选同等看待，经过精修、低分淘汰、
两级 NMS 与 IoU 匹配，输出继承了ID的跟踪结果和未匹配的检测：

1. 跟踪候选精修并淘汰 score < thresh_score 的框
2. 第一级 NMS：跟踪集合与检测集合内部分别做 NMS
3. 匹配：按跟踪分数降序，每个跟踪框取 IoU 最大的可用检测，
   IoU > thresh_iou 即匹配；检测分数更高时用检测框替换（ID 保留）
4. 第二级 NMS：合并集合做跨来源的最大分数选择
5. 返回存活的跟踪目标与未匹配检测

融合本身从不分配新ID，新轨迹由流水线创建。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from tracker.core import BBox, Detection, Target, iou
from tracker.refiner import Proposal, Refiner
from utils.errors import ConfigError, RefinerFailure, TrackerError


@dataclass(frozen=True)
class FuseConfig:
    """融合阈值，默认值均为 0.5"""

    thresh_score: float = 0.5
    thresh_iou: float = 0.5
    thresh_nms: float = 0.5
    prefer_detections: bool = False

    def __post_init__(self):
        for name in ("thresh_score", "thresh_iou", "thresh_nms"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} 必须位于 [0, 1]: {value}")


@dataclass
class FuseOutcome:
    """
    融合结果

    tracked: 本帧跟踪结果 B_trk
    unmatched_detections: 未继承ID的检测，保持输入顺序
    matches: 跟踪ID -> 与之匹配的检测在输入中的下标
    """

    tracked: List[Target] = field(default_factory=list)
    unmatched_detections: List[Detection] = field(default_factory=list)
    matches: Dict[int, int] = field(default_factory=dict)


# ==================== 精修与淘汰 ====================

def refine_and_kill(frame: int, proposals: Sequence[Proposal], refiner: Refiner,
                    cfg: FuseConfig) -> List[Proposal]:
    """
    精修候选并淘汰低分框

    Args:
        frame: 帧号
        proposals: 候选（可带轨迹ID）
        refiner: 精修器
        cfg: 融合阈值

    Returns:
        List[Proposal]: 分数已填充、score >= thresh_score 且面积为正的候选，顺序不变

    Raises:
        RefinerFailure: 精修器抛出异常或返回了不合法的结果
    """
    if not proposals:
        return []
    try:
        refined = refiner.refine(frame, proposals)
    except TrackerError:
        raise
    except Exception as e:
        raise RefinerFailure(f"精修器 {getattr(refiner, 'name', refiner)} 执行失败: {e}") from e
    if len(refined) != len(proposals):
        raise RefinerFailure(f"精修器输出长度 {len(refined)} 与输入 {len(proposals)} 不一致")

    survivors = []
    for proposal, item in zip(proposals, refined):
        try:
            box, score = item
            score = float(score)
        except (TypeError, ValueError) as e:
            raise RefinerFailure(f"精修器输出格式错误: {item!r}") from e
        if not isinstance(box, BBox) or not 0.0 <= score <= 1.0:
            raise RefinerFailure(f"精修器输出不合法: box={box!r}, score={score}")
        if score < cfg.thresh_score or box.area <= 0:
            continue
        survivors.append(Proposal(box, score, proposal.track_id))
    return survivors


# ==================== NMS ====================

def nms_indices(boxes: Sequence[BBox], scores: Sequence[float], thresh_nms: float) -> List[int]:
    """
    贪心 NMS

    反复保留剩余框中分数最高者（同分时原下标小者优先），
    并抑制与其 IoU > thresh_nms 的框。

    Returns:
        List[int]: 存活框的下标，按分数降序
    """
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    keep: List[int] = []
    suppressed = [False] * len(boxes)
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        for j in order[pos + 1:]:
            if not suppressed[j] and iou(boxes[i], boxes[j]) > thresh_nms:
                suppressed[j] = True
    return keep


def nms(items: Sequence[Tuple[BBox, float]], thresh_nms: float) -> List[Tuple[BBox, float]]:
    """对 (框, 分数) 序列做贪心 NMS，返回按分数降序的存活子序列"""
    keep = nms_indices([b for b, _ in items], [s for _, s in items], thresh_nms)
    return [items[i] for i in keep]


# ==================== 融合 ====================

def fuse(tracked: Sequence[Target], detections: Sequence[Detection], refiner: Refiner,
         frame: int, cfg: FuseConfig) -> FuseOutcome:
    """
    融合跟踪候选与已精修的检测

    Args:
        tracked: 光流推进后的跟踪目标 B_t
        detections: 已精修的检测 D_ref
        refiner: 精修器（用于跟踪候选）
        frame: 当前帧号
        cfg: 融合阈值

    Returns:
        FuseOutcome: 跟踪结果、未匹配检测与匹配关系
    """
    # 1. 跟踪候选精修 + 淘汰
    refined = refine_and_kill(frame, [Proposal(t.box, None, t.id) for t in tracked], refiner, cfg)

    # 2. 第一级 NMS，两个来源分别处理
    trk_keep = nms_indices([p.box for p in refined], [p.score for p in refined], cfg.thresh_nms)
    trk = [refined[i] for i in trk_keep]
    det_keep = nms_indices([d.box for d in detections], [d.score for d in detections], cfg.thresh_nms)

    # 3. 按跟踪分数降序贪心匹配，每个检测最多匹配一次
    available = list(det_keep)
    matches: Dict[int, int] = {}
    fused: List[Tuple[BBox, float, int]] = []
    for proposal in trk:
        best_idx, best_iou = -1, cfg.thresh_iou
        for det_idx in available:
            overlap = iou(proposal.box, detections[det_idx].box)
            if overlap > best_iou or (overlap == best_iou and best_idx >= 0 and det_idx < best_idx):
                best_idx, best_iou = det_idx, overlap
        box, score = proposal.box, proposal.score
        if best_idx >= 0:
            available.remove(best_idx)
            matches[proposal.track_id] = best_idx
            det = detections[best_idx]
            if cfg.prefer_detections:
                box, score = det.box, max(det.score, score)
            elif det.score > score:
                # 同分保留跟踪框
                box, score = det.box, det.score
        fused.append((box, score, proposal.track_id))

    # 4. 第二级 NMS：跟踪结果在前，同分时跟踪框胜出
    leftovers = sorted(available)
    merged_boxes = [b for b, _, _ in fused] + [detections[i].box for i in leftovers]
    merged_scores = [s for _, s, _ in fused] + [detections[i].score for i in leftovers]
    keep = set(nms_indices(merged_boxes, merged_scores, cfg.thresh_nms))

    outcome = FuseOutcome(matches=matches)
    for pos, (box, score, track_id) in enumerate(fused):
        if pos in keep:
            outcome.tracked.append(Target(box, track_id, score, frame))
    for offset, det_idx in enumerate(leftovers):
        if len(fused) + offset in keep:
            outcome.unmatched_detections.append(detections[det_idx])
    return outcome
