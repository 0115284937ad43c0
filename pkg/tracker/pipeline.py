# -*- coding: utf-8 -*-
"""
FFT 推理流水线

逐帧执行：
1. 首帧：精修检测、淘汰低分、帧内 NMS，存活者各自成为新轨迹
2. 精修当前帧检测
3. 取出上一帧有记录的目标，用光流推进到当前帧
4. 融合跟踪候选与检测
5. 把融合结果追加到对应轨迹
6. 回溯：把未匹配检测与当前帧没有记录的轨迹匹配
7. 仍未匹配的检测创建新轨迹

轨迹集合只由本模块单线程写入，帧严格按顺序处理。
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from tracker.core import Detection, Target, TrajectorySet, iou
from tracker.flow_tracker import FlowField, MotionEstimatorConfig, flow_targets
from tracker.fuse_tracker import FuseConfig, fuse, nms_indices, refine_and_kill
from tracker.refiner import Proposal, Refiner
from utils.errors import ConfigError, MissingFlow, PipelineError
from utils.log import logger


DEFAULT_BT_FRAMES = 30


def bt_frames_for_fps(fps: Optional[float]) -> int:
    """
    按帧率选择回溯帧数

    低帧率(< 7) 用 3，中帧率(7~14) 用 10，高帧率用 30；帧率未知时用 30。
    """
    if fps is None or fps <= 0:
        return DEFAULT_BT_FRAMES
    if fps < 7:
        return 3
    if fps < 14:
        return 10
    return 30


@dataclass(frozen=True)
class PipelineConfig:
    """流水线参数"""

    fuse: FuseConfig = field(default_factory=FuseConfig)
    bt_frames: int = DEFAULT_BT_FRAMES
    motion: MotionEstimatorConfig = field(default_factory=MotionEstimatorConfig)
    use_flow: bool = True

    def __post_init__(self):
        if int(self.bt_frames) < 1:
            raise ConfigError(f"bt_frames 必须 >= 1: {self.bt_frames}")

    def to_dict(self) -> Dict[str, Any]:
        """展开为扁平字典（与配置文件 tracker 节同构）"""
        return {
            "thresh_score": self.fuse.thresh_score,
            "thresh_iou": self.fuse.thresh_iou,
            "thresh_nms": self.fuse.thresh_nms,
            "prefer_detections": self.fuse.prefer_detections,
            "bt_frames": self.bt_frames,
            "use_flow": self.use_flow,
            "inner_margin_ratio": self.motion.inner_margin_ratio,
            "min_pixels": self.motion.min_pixels,
            "scale_mode": self.motion.scale_mode,
        }


FUSE_KEYS = ("thresh_score", "thresh_iou", "thresh_nms", "prefer_detections")
MOTION_KEYS = ("inner_margin_ratio", "min_pixels", "scale_mode")
PIPELINE_KEYS = ("bt_frames", "use_flow")
# 配置节中允许出现、但不属于 PipelineConfig 的键
EXTRA_KEYS = ("refiner",)


def pipeline_config_from_mapping(values: Mapping[str, Any], fps: Optional[float] = None) -> PipelineConfig:
    """
    由扁平键值构造流水线参数，缺省项取默认值

    Args:
        values: tracker 配置节（可含 None 值，视为未设置）
        fps: 序列帧率，bt_frames 未设置时按帧率策略选择

    Returns:
        PipelineConfig: 流水线参数

    Raises:
        ConfigError: 出现未知键或取值非法
    """
    known = set(FUSE_KEYS) | set(MOTION_KEYS) | set(PIPELINE_KEYS) | set(EXTRA_KEYS)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"未知的 tracker 配置项: {unknown}")
    given = {k: v for k, v in values.items() if v is not None}
    try:
        fuse_cfg = FuseConfig(**{k: given[k] for k in FUSE_KEYS if k in given})
        motion_cfg = MotionEstimatorConfig(**{k: given[k] for k in MOTION_KEYS if k in given})
        bt_frames = int(given["bt_frames"]) if "bt_frames" in given else bt_frames_for_fps(fps)
        return PipelineConfig(fuse=fuse_cfg, bt_frames=bt_frames, motion=motion_cfg,
                              use_flow=bool(given.get("use_flow", True)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"tracker 配置取值非法: {e}") from e


@dataclass
class FrameBundle:
    """
    单帧输入

    flow: 从 t-1 到 t 的光流
    lookback_flows: 回溯深度 d -> 从 t-d 到 t 的光流（可以是惰性映射），d >= 2
    detections: 当前帧原始检测
    """

    frame: int
    flow: Optional[FlowField] = None
    lookback_flows: Mapping[int, FlowField] = field(default_factory=dict)
    detections: List[Detection] = field(default_factory=list)

    def __post_init__(self):
        if self.frame < 0:
            raise PipelineError(f"帧号不能为负: {self.frame}")
        bad = [d for d in self.lookback_flows.keys() if d < 2]
        if bad:
            raise PipelineError(f"回溯深度必须 >= 2: {bad}")


# ==================== 推理步骤 ====================

def refine_detections(frame: int, detections: Sequence[Detection], refiner: Refiner,
                      cfg: PipelineConfig) -> List[Detection]:
    """精修检测、淘汰低分并做帧内 NMS，存活者保持输入顺序"""
    survivors = refine_and_kill(frame, [Proposal(d.box, d.score) for d in detections], refiner, cfg.fuse)
    keep = nms_indices([p.box for p in survivors], [p.score for p in survivors], cfg.fuse.thresh_nms)
    return [Detection(survivors[i].box, survivors[i].score) for i in sorted(keep)]


def init(first: FrameBundle, refiner: Refiner, cfg: PipelineConfig) -> TrajectorySet:
    """
    用首帧检测初始化轨迹集合

    Raises:
        PipelineError: 首帧帧号不为 0
    """
    if first.frame != 0:
        raise PipelineError(f"首帧帧号必须为 0: {first.frame}")
    trajectories = TrajectorySet()
    for det in refine_detections(0, first.detections, refiner, cfg):
        trajectories.new_trajectory(0, det.box, det.score)
    logger.debug("轨迹初始化", frame=0, detections=len(first.detections), tracks=len(trajectories))
    return trajectories


def _advance(flow: Optional[FlowField], targets: List[Target], frame: int,
             cfg: PipelineConfig, what: str) -> List[Target]:
    if not cfg.use_flow:
        return [Target(t.box, t.id, t.score, frame) for t in targets]
    if flow is None:
        raise MissingFlow(f"帧 {frame} 缺少{what}光流")
    return flow_targets(flow, targets, cfg.motion, frame=frame)


def backtrack(trajectories: TrajectorySet, not_associated: Sequence, unmatched: Sequence[Detection],
              bundle: FrameBundle, refiner: Refiner,
              cfg: PipelineConfig) -> Tuple[List[Target], List[Detection]]:
    """
    回溯：用更早帧的框与未匹配检测重新关联

    深度 d 从 2 递增到 bt_frames，只尝试最后一条记录恰好在 t-d 的轨迹，
    把该框用 t-d -> t 的光流直接推进到 t 后与剩余检测融合。
    只保留与检测匹配上的轨迹，每条轨迹最多复活一次。

    Args:
        trajectories: 轨迹集合（本函数不修改）
        not_associated: 当前帧没有记录的轨迹 T_nas
        unmatched: 融合后仍未匹配的检测
        bundle: 当前帧输入
        refiner: 精修器
        cfg: 流水线参数

    Returns:
        Tuple[List[Target], List[Detection]]: (复活的目标, 仍未匹配的检测)
    """
    t = bundle.frame
    remaining = list(unmatched)
    if not remaining or cfg.bt_frames < 2:
        return [], remaining

    occupied = [target.box for target in trajectories.targets_at(t)]
    revived: List[Target] = []
    revived_ids = set()
    thresh_nms = cfg.fuse.thresh_nms

    for depth in range(2, cfg.bt_frames + 1):
        if not remaining:
            break
        source = t - depth
        if source < 0:
            break
        candidates = [traj for traj in not_associated
                      if traj.id not in revived_ids and traj.last_frame == source]
        if not candidates:
            continue
        flow = bundle.lookback_flows.get(depth) if cfg.use_flow else None
        if cfg.use_flow and flow is None:
            logger.warning("缺少回溯光流，跳过该深度", frame=t, depth=depth)
            continue

        olds = [traj.target_at(source) for traj in sorted(candidates, key=lambda tr: tr.id)]
        moved = _advance(flow, olds, t, cfg, f"深度 {depth} 的回溯")
        outcome = fuse(moved, remaining, refiner, t, cfg.fuse)

        consumed = set()
        for target in outcome.tracked:
            if target.id not in outcome.matches:
                continue
            # 与本帧已有框重叠过大的不复活
            if any(iou(target.box, box) > thresh_nms for box in occupied):
                continue
            revived.append(target)
            revived_ids.add(target.id)
            occupied.append(target.box)
            consumed.add(outcome.matches[target.id])
            logger.debug("回溯复活轨迹", frame=t, track_id=target.id, depth=depth)

        remaining = [det for idx, det in enumerate(remaining)
                     if idx not in consumed
                     and not any(iou(det.box, r.box) > thresh_nms for r in revived)]

    return revived, remaining


def step(trajectories: TrajectorySet, bundle: FrameBundle, refiner: Refiner,
         cfg: PipelineConfig) -> TrajectorySet:
    """
    处理一帧（第 2~7 步），原地更新并返回轨迹集合

    Raises:
        MissingFlow: 需要推进目标但缺少光流
        PipelineError: 帧号非法
    """
    t = bundle.frame
    if t < 1:
        raise PipelineError(f"step 只处理 t >= 1 的帧: {t}")

    detections = refine_detections(t, bundle.detections, refiner, cfg)

    previous = trajectories.targets_at(t - 1)
    moved = _advance(bundle.flow, previous, t, cfg, "到上一帧的") if previous else []

    outcome = fuse(moved, detections, refiner, t, cfg.fuse)
    for target in outcome.tracked:
        trajectories.append(target.id, t, target.box, target.score)

    not_associated = trajectories.without_entry_at(t)
    revived, still_unmatched = backtrack(trajectories, not_associated, outcome.unmatched_detections,
                                         bundle, refiner, cfg)
    for target in revived:
        trajectories.append(target.id, t, target.box, target.score)

    for det in still_unmatched:
        trajectories.new_trajectory(t, det.box, det.score)

    logger.debug("帧处理完成", frame=t, detections=len(detections), tracked=len(outcome.tracked),
                 revived=len(revived), created=len(still_unmatched))
    return trajectories


def run(bundles: Iterable[FrameBundle], refiner: Refiner, cfg: PipelineConfig) -> TrajectorySet:
    """
    在整段序列上运行流水线

    Raises:
        PipelineError: 帧号不是从 0 开始的连续整数
    """
    trajectories: Optional[TrajectorySet] = None
    expected = 0
    for bundle in bundles:
        if bundle.frame != expected:
            raise PipelineError(f"帧号不连续: 期望 {expected}, 实际 {bundle.frame}")
        if trajectories is None:
            trajectories = init(bundle, refiner, cfg)
        else:
            step(trajectories, bundle, refiner, cfg)
        expected += 1
    if trajectories is None:
        trajectories = TrajectorySet()
    logger.debug("序列跟踪完成", frames=expected, tracks=len(trajectories))
    return trajectories
