# -*- coding: utf-8 -*-
"""
跟踪评估模块

- hungarian：矩形代价矩阵的最小代价一一指派（scipy）
- clear_mot：CLEAR MOT 指标（MOTA, MOTP, FP, FN, IDSW, Frag, MT, ML）
- identity_metrics：轨迹级全局匹配的 IDF1 / IDP / IDR
- breakdown：按遮挡可见度与目标高度统计跟踪成功/丢失数量

所有函数都是纯函数，可对多个序列并发调用。
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from tracker.core import BBox, TrajectorySet, iou_matrix
from utils.errors import FrameRangeMismatch


DEFAULT_IOU_THRESH = 0.5
MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2

REPORT_COLUMNS = ("MOTA", "MOTP", "IDF1", "IDP", "IDR", "MT", "ML", "FP", "FN", "IDSW", "Frag")

VISIBILITY_EDGES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
HEIGHT_EDGES = (0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0)
# 尺寸统计只看几乎未被遮挡的目标
SIZE_MIN_VISIBILITY = 0.8


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


# ==================== 指派 ====================

def hungarian(cost) -> Tuple[List[Tuple[int, int]], float]:
    """
    最小代价一一指派

    Args:
        cost: R x C 实数矩阵（不允许的配对用足够大的哨兵值表示）

    Returns:
        Tuple[List[Tuple[int, int]], float]: (按行号升序的 (行, 列) 配对, 总代价)，
        配对数等于 min(R, C)
    """
    matrix = np.asarray(cost, dtype=np.float64)
    if matrix.ndim != 2 or matrix.size == 0:
        return [], 0.0
    rows, cols = linear_sum_assignment(matrix)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    return pairs, float(matrix[rows, cols].sum())


# ==================== CLEAR MOT ====================

@dataclass
class FrameAssignment:
    """单帧的真值/预测对应关系"""

    frame: int
    matches: Set[Tuple[int, int, float]] = field(default_factory=set)
    unmatched_gt: Set[int] = field(default_factory=set)
    unmatched_pred: Set[int] = field(default_factory=set)


@dataclass
class ClearMotCounts:
    """CLEAR MOT 计数部分"""

    gt_boxes: int = 0
    pred_boxes: int = 0
    matches: int = 0
    iou_sum: float = 0.0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    frag: int = 0
    gt_tracks: int = 0
    mostly_tracked: int = 0
    mostly_lost: int = 0
    num_frames: int = 0
    assignments: List[FrameAssignment] = field(default_factory=list, repr=False)

    @property
    def mota(self) -> float:
        return 1.0 - (self.fp + self.fn + self.idsw) / max(1, self.gt_boxes)

    @property
    def motp(self) -> float:
        return _ratio(self.iou_sum, self.matches)


def _evaluated_frames(gt: TrajectorySet, pred: TrajectorySet, num_frames: Optional[int]) -> List[int]:
    frames = sorted(set(gt.frames()) | set(pred.frames()))
    if num_frames is None:
        return frames
    outside = [f for f in frames if f < 0 or f >= num_frames]
    if outside:
        raise FrameRangeMismatch(f"帧号超出序列范围 [0, {num_frames}): {outside[:5]}")
    return list(range(num_frames))


def clear_mot(gt: TrajectorySet, pred: TrajectorySet, iou_thresh: float = DEFAULT_IOU_THRESH,
              num_frames: Optional[int] = None) -> ClearMotCounts:
    """
    计算 CLEAR MOT 计数

    每帧先沿用上一帧仍然有效（IoU >= iou_thresh）的对应关系，
    剩余目标在 1 - IoU 代价上做匈牙利匹配。

    Args:
        gt: 真值轨迹
        pred: 预测轨迹
        iou_thresh: 匹配阈值
        num_frames: 序列帧数；给定时两侧帧号都必须落在 [0, num_frames)

    Returns:
        ClearMotCounts: 计数与逐帧对应关系

    Raises:
        FrameRangeMismatch: 帧号超出序列范围
    """
    counts = ClearMotCounts()
    frames = _evaluated_frames(gt, pred, num_frames)
    counts.num_frames = len(frames)

    previous: Dict[int, int] = {}      # 上一帧的 gt -> pred
    last_match: Dict[int, int] = {}    # 每个 gt 最近一次匹配的 pred
    state: Dict[int, str] = {}         # matched / gap
    matched_frames: Dict[int, int] = {}

    for frame in frames:
        gts = gt.targets_at(frame)
        preds = pred.targets_at(frame)
        counts.gt_boxes += len(gts)
        counts.pred_boxes += len(preds)
        overlaps = iou_matrix([g.box for g in gts], [p.box for p in preds])
        gt_index = {g.id: i for i, g in enumerate(gts)}
        pred_index = {p.id: j for j, p in enumerate(preds)}

        pairs: List[Tuple[int, int]] = []
        for gid, pid in previous.items():
            i, j = gt_index.get(gid), pred_index.get(pid)
            if i is not None and j is not None and overlaps[i, j] >= iou_thresh:
                pairs.append((i, j))

        free_rows = [i for i in range(len(gts)) if i not in {p[0] for p in pairs}]
        free_cols = [j for j in range(len(preds)) if j not in {p[1] for p in pairs}]
        if free_rows and free_cols:
            sub = overlaps[np.ix_(free_rows, free_cols)]
            sentinel = float(min(len(free_rows), len(free_cols)) + 1)
            cost = np.where(sub >= iou_thresh, 1.0 - sub, sentinel)
            for r, c in hungarian(cost)[0]:
                if sub[r, c] >= iou_thresh:
                    pairs.append((free_rows[r], free_cols[c]))

        assignment = FrameAssignment(frame)
        current: Dict[int, int] = {}
        for i, j in pairs:
            gid, pid = gts[i].id, preds[j].id
            overlap = float(overlaps[i, j])
            assignment.matches.add((gid, pid, overlap))
            current[gid] = pid
            counts.matches += 1
            counts.iou_sum += overlap
            if gid in last_match and last_match[gid] != pid:
                counts.idsw += 1
            last_match[gid] = pid
            if state.get(gid) == "gap":
                counts.frag += 1
            state[gid] = "matched"
            matched_frames[gid] = matched_frames.get(gid, 0) + 1

        assignment.unmatched_gt = {g.id for g in gts if g.id not in current}
        assignment.unmatched_pred = {p.id for p in preds} - set(current.values())
        for gid in assignment.unmatched_gt:
            if state.get(gid) == "matched":
                state[gid] = "gap"
        counts.fn += len(assignment.unmatched_gt)
        counts.fp += len(assignment.unmatched_pred)
        counts.assignments.append(assignment)
        previous = current

    for trajectory in gt:
        counts.gt_tracks += 1
        coverage = _ratio(matched_frames.get(trajectory.id, 0), len(trajectory))
        if coverage >= MOSTLY_TRACKED:
            counts.mostly_tracked += 1
        elif coverage <= MOSTLY_LOST:
            counts.mostly_lost += 1
    return counts


# ==================== 身份指标 ====================

@dataclass
class IdentityCounts:
    """轨迹级全局匹配的计数"""

    idtp: int = 0
    idfp: int = 0
    idfn: int = 0

    @property
    def idp(self) -> float:
        return _ratio(self.idtp, self.idtp + self.idfp)

    @property
    def idr(self) -> float:
        return _ratio(self.idtp, self.idtp + self.idfn)

    @property
    def idf1(self) -> float:
        return _ratio(2 * self.idtp, 2 * self.idtp + self.idfp + self.idfn)


def identity_metrics(gt: TrajectorySet, pred: TrajectorySet, iou_thresh: float = DEFAULT_IOU_THRESH,
                     num_frames: Optional[int] = None) -> IdentityCounts:
    """
    IDF1 / IDP / IDR

    在整条真值轨迹与整条预测轨迹之间做全局最小代价二分匹配：
    配对代价为两条轨迹未能在阈值内重合的帧数之和，
    另加虚拟行列表示轨迹不参与匹配（代价为其全部帧数）。

    Raises:
        FrameRangeMismatch: 帧号超出序列范围
    """
    frames = _evaluated_frames(gt, pred, num_frames)
    gt_ids, pred_ids = gt.ids, pred.ids
    n_gt, n_pred = len(gt_ids), len(pred_ids)
    gt_len = np.array([len(gt[k]) for k in gt_ids], dtype=np.float64)
    pred_len = np.array([len(pred[k]) for k in pred_ids], dtype=np.float64)
    total_gt, total_pred = int(gt_len.sum()), int(pred_len.sum())
    if n_gt == 0 or n_pred == 0:
        return IdentityCounts(idtp=0, idfp=total_pred, idfn=total_gt)

    gt_pos = {k: i for i, k in enumerate(gt_ids)}
    pred_pos = {k: j for j, k in enumerate(pred_ids)}
    overlap_frames = np.zeros((n_gt, n_pred), dtype=np.float64)
    for frame in frames:
        gts = gt.targets_at(frame)
        preds = pred.targets_at(frame)
        if not gts or not preds:
            continue
        hits = iou_matrix([g.box for g in gts], [p.box for p in preds]) >= iou_thresh
        for i, j in zip(*np.nonzero(hits)):
            overlap_frames[gt_pos[gts[i].id], pred_pos[preds[j].id]] += 1

    sentinel = float(total_gt + total_pred + 1)
    size = n_gt + n_pred
    cost = np.zeros((size, size), dtype=np.float64)
    cost[:n_gt, :n_pred] = gt_len[:, None] + pred_len[None, :] - 2.0 * overlap_frames
    cost[:n_gt, n_pred:] = sentinel
    cost[:n_gt, n_pred:][np.diag_indices(n_gt)] = gt_len
    cost[n_gt:, :n_pred] = sentinel
    cost[n_gt:, :n_pred][np.diag_indices(n_pred)] = pred_len

    pairs, _ = hungarian(cost)
    idtp = int(sum(overlap_frames[r, c] for r, c in pairs if r < n_gt and c < n_pred))
    return IdentityCounts(idtp=idtp, idfp=total_pred - idtp, idfn=total_gt - idtp)


# ==================== 报表 ====================

@dataclass
class MotReport:
    """单个序列（或汇总）的评估结果"""

    name: str
    clear: ClearMotCounts
    identity: IdentityCounts

    @property
    def mota(self) -> float:
        return self.clear.mota

    @property
    def motp(self) -> float:
        return self.clear.motp

    @property
    def idf1(self) -> float:
        return self.identity.idf1

    @property
    def idp(self) -> float:
        return self.identity.idp

    @property
    def idr(self) -> float:
        return self.identity.idr

    @property
    def fp(self) -> int:
        return self.clear.fp

    @property
    def fn(self) -> int:
        return self.clear.fn

    @property
    def idsw(self) -> int:
        return self.clear.idsw

    @property
    def frag(self) -> int:
        return self.clear.frag

    @property
    def mt(self) -> float:
        """MT 百分比"""
        return 100.0 * _ratio(self.clear.mostly_tracked, self.clear.gt_tracks)

    @property
    def ml(self) -> float:
        """ML 百分比"""
        return 100.0 * _ratio(self.clear.mostly_lost, self.clear.gt_tracks)

    def as_row(self) -> Dict[str, float]:
        return {
            "MOTA": self.mota, "MOTP": self.motp, "IDF1": self.idf1, "IDP": self.idp, "IDR": self.idr,
            "MT": self.mt, "ML": self.ml, "FP": self.fp, "FN": self.fn, "IDSW": self.idsw, "Frag": self.frag,
        }


def evaluate(gt: TrajectorySet, pred: TrajectorySet, name: str = "",
             iou_thresh: float = DEFAULT_IOU_THRESH, num_frames: Optional[int] = None) -> MotReport:
    """对单个序列计算全部指标"""
    clear = clear_mot(gt, pred, iou_thresh, num_frames)
    identity = identity_metrics(gt, pred, iou_thresh, num_frames)
    return MotReport(name, clear, identity)


def aggregate(reports: Iterable[MotReport], name: str = "OVERALL") -> MotReport:
    """按计数累加多个序列的结果"""
    clear = ClearMotCounts()
    identity = IdentityCounts()
    for report in reports:
        c = report.clear
        clear.gt_boxes += c.gt_boxes
        clear.pred_boxes += c.pred_boxes
        clear.matches += c.matches
        clear.iou_sum += c.iou_sum
        clear.fp += c.fp
        clear.fn += c.fn
        clear.idsw += c.idsw
        clear.frag += c.frag
        clear.gt_tracks += c.gt_tracks
        clear.mostly_tracked += c.mostly_tracked
        clear.mostly_lost += c.mostly_lost
        clear.num_frames += c.num_frames
        identity.idtp += report.identity.idtp
        identity.idfp += report.identity.idfp
        identity.idfn += report.identity.idfn
    return MotReport(name, clear, identity)


def _format_cell(column: str, value: float) -> str:
    if column in ("MT", "ML"):
        return f"{value:.1f}%"
    if column in ("FP", "FN", "IDSW", "Frag"):
        return str(int(value))
    return f"{value:.4f}"


def format_report_table(reports: Sequence[MotReport]) -> str:
    """输出制表符分隔的指标表，列顺序固定"""
    lines = ["\t".join(("name",) + REPORT_COLUMNS)]
    for report in reports:
        row = report.as_row()
        lines.append("\t".join([report.name] + [_format_cell(c, row[c]) for c in REPORT_COLUMNS]))
    return "\n".join(lines) + "\n"


# ==================== 可见度 / 尺寸分析 ====================

@dataclass
class BreakdownBin:
    """一个统计区间内的跟踪成功 / 丢失数"""

    low: float
    high: float
    tracked: int = 0
    missing: int = 0

    @property
    def label(self) -> str:
        return f"[{self.low:g}, {self.high:g})"

    @property
    def tracked_ratio(self) -> float:
        return _ratio(self.tracked, self.tracked + self.missing)


@dataclass
class Breakdown:
    visibility: List[BreakdownBin]
    height: List[BreakdownBin]


def box_visibility(box: BBox, others: Sequence[BBox]) -> float:
    """
    可见度 = 未被其它框覆盖的面积 / 框面积

    覆盖面积取与其它框两两交集之和，上限为框面积。
    """
    if box.area <= 0:
        return 0.0
    covered = 0.0
    for other in others:
        iw = min(box.x2, other.x2) - max(box.x, other.x)
        ih = min(box.y2, other.y2) - max(box.y, other.y)
        if iw > 0 and ih > 0:
            covered += iw * ih
    return 1.0 - min(covered, box.area) / box.area


def _bins(edges: Sequence[float]) -> List[BreakdownBin]:
    return [BreakdownBin(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]


def _bin_index(value: float, edges: Sequence[float]) -> int:
    # 最后一个区间右端闭合，超出上界的归入最后一个区间
    idx = int(np.searchsorted(edges, value, side="right")) - 1
    return min(max(idx, 0), len(edges) - 2)


def breakdown(gt: TrajectorySet, counts: ClearMotCounts,
              visibility_edges: Sequence[float] = VISIBILITY_EDGES,
              height_edges: Sequence[float] = HEIGHT_EDGES) -> Breakdown:
    """
    按可见度和高度统计真值框是否被正确跟踪

    Args:
        gt: 真值轨迹
        counts: 同一真值上 clear_mot 的结果（使用其逐帧对应关系）
        visibility_edges: 可见度区间边界
        height_edges: 高度区间边界（像素）

    Returns:
        Breakdown: 两组区间统计
    """
    result = Breakdown(_bins(visibility_edges), _bins(height_edges))
    for assignment in counts.assignments:
        targets = gt.targets_at(assignment.frame)
        matched = {gid for gid, _, _ in assignment.matches}
        for target in targets:
            others = [t.box for t in targets if t.id != target.id]
            visibility = box_visibility(target.box, others)
            hit = target.id in matched
            vis_bin = result.visibility[_bin_index(visibility, visibility_edges)]
            if hit:
                vis_bin.tracked += 1
            else:
                vis_bin.missing += 1
            if visibility > SIZE_MIN_VISIBILITY:
                size_bin = result.height[_bin_index(target.box.h, height_edges)]
                if hit:
                    size_bin.tracked += 1
                else:
                    size_bin.missing += 1
    return result


def format_breakdown(result: Breakdown) -> str:
    """输出可见度与尺寸统计表"""
    lines = ["kind\trange\ttracked\tmissing\tratio"]
    for kind, bins in (("visibility", result.visibility), ("height", result.height)):
        for b in bins:
            lines.append(f"{kind}\t{b.label}\t{b.tracked}\t{b.missing}\t{b.tracked_ratio:.4f}")
    return "\n".join(lines) + "\n"
