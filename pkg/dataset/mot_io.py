# -*- coding: utf-8 -*-
"""
MOTChallenge 数据读写

文件中的帧号与坐标都是1起始，内存中一律为0起始，转换只在本模块发生。

支持的格式：
- det.txt：frame,-1,x,y,w,h,score[,...]
- gt.txt：frame,id,x,y,w,h[,active,class,visibility]
- 结果文件：frame,id,x,y,w,h,score,-1,-1,-1
- seqinfo.ini：[Sequence] 节
- .flo：Middlebury 光流容器（小端）

所有解析函数对任意输入都只会返回结果或抛出 TrackerError 子类。
"""

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from tracker.core import BBox, Detection, TrajectorySet
from tracker.flow_tracker import FlowField
from tracker.pipeline import FrameBundle
from utils.errors import (BadMagic, FlowFormatError, GeometryError, MissingFlow, NonFiniteValue,
                          ParseError, TrackerError, TruncatedFile)
from utils.log import logger


FLO_MAGIC = 202021.25
FLO_HEADER_BYTES = 12
FLOW_FILE_PATTERN = re.compile(r"^(\d+)_(\d+)\.flo$")

COORD_DIGITS = 2
SCORE_DIGITS = 6


# ==================== 序列信息 ====================

@dataclass(frozen=True)
class SeqInfo:
    """seqinfo.ini 中的序列信息"""

    name: str
    width: int
    height: int
    frame_rate: float
    seq_length: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.seq_length <= 0:
            raise ParseError(None, f"序列信息必须为正: {self.width}x{self.height}, 长度 {self.seq_length}")
        if not math.isfinite(self.frame_rate) or self.frame_rate <= 0:
            raise ParseError(None, f"帧率必须为正: {self.frame_rate}")


def parse_seqinfo(text: str) -> SeqInfo:
    """
    解析 seqinfo.ini

    Raises:
        ParseError: 缺少 [Sequence] 节或字段非法
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
        section = parser["Sequence"]
        return SeqInfo(
            name=section.get("name", ""),
            width=int(section["imWidth"]),
            height=int(section["imHeight"]),
            frame_rate=float(section.get("frameRate", "30")),
            seq_length=int(section["seqLength"]),
        )
    except ParseError:
        raise
    except (configparser.Error, KeyError, ValueError) as e:
        raise ParseError(None, f"seqinfo 格式错误: {e}") from e


def write_seqinfo(info: SeqInfo) -> str:
    """输出 seqinfo.ini 文本"""
    return (
        "[Sequence]\n"
        f"name={info.name}\n"
        f"frameRate={_fmt(info.frame_rate, COORD_DIGITS)}\n"
        f"seqLength={info.seq_length}\n"
        f"imWidth={info.width}\n"
        f"imHeight={info.height}\n"
    )


# ==================== 文本行解析 ====================

def read_text_file(path: Union[str, Path]) -> str:
    """
    以 UTF-8 读取文本文件

    Raises:
        ParseError: 内容不是合法的 UTF-8
        OSError: 文件无法读取
    """
    data = Path(path).read_bytes()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(None, f"{path} 不是 UTF-8 文本: {e.reason}（字节偏移 {e.start}）") from e


def _rows(text: str, min_fields: int) -> Iterator[Tuple[int, List[float]]]:
    """逐行切分 CSV，跳过空行和 # 注释，返回 (行号, 数值列表)"""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < min_fields:
            raise ParseError(lineno, f"字段数不足: {len(parts)} < {min_fields}")
        try:
            values = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(lineno, f"无法解析数值: {e}") from e
        if not all(math.isfinite(v) for v in values):
            raise ParseError(lineno, "存在非有限数值")
        yield lineno, values


def _as_int(lineno: int, value: float, what: str, minimum: int) -> int:
    if not float(value).is_integer() or value < minimum:
        raise ParseError(lineno, f"{what} 必须为 >= {minimum} 的整数: {value}")
    return int(value)


def _box(lineno: int, values: List[float]) -> BBox:
    x, y, w, h = values[2:6]
    try:
        return BBox(x - 1.0, y - 1.0, w, h)
    except GeometryError as e:
        raise ParseError(lineno, str(e)) from e


def parse_detections(text: str) -> Dict[int, List[Detection]]:
    """
    解析检测文件

    分数超出 [0, 1] 时按整个序列做 min-max 归一化（全部相同则记为 1.0）。

    Returns:
        Dict[int, List[Detection]]: 0 起始帧号 -> 检测（保持文件顺序）

    Raises:
        ParseError: 行格式错误
    """
    rows: List[Tuple[int, BBox, float]] = []
    for lineno, values in _rows(text, 7):
        frame = _as_int(lineno, values[0], "帧号", 1) - 1
        rows.append((frame, _box(lineno, values), values[6]))
    if not rows:
        return {}

    scores = np.array([score for _, _, score in rows], dtype=np.float64)
    low, high = float(scores.min()), float(scores.max())
    if low < 0.0 or high > 1.0:
        if high > low:
            scores = (scores - low) / (high - low)
        else:
            scores = np.ones_like(scores)
        logger.info("检测分数超出 [0, 1]，已做 min-max 归一化", min=low, max=high, rows=len(rows))

    detections: Dict[int, List[Detection]] = {}
    for (frame, box, _), score in zip(rows, scores):
        detections.setdefault(frame, []).append(Detection(box, float(min(1.0, max(0.0, score)))))
    return detections


def parse_refinements(text: str) -> Dict[int, List[Detection]]:
    """
    解析离线精修结果：frame,x,y,w,h,score（1 起始，分数必须已在 [0, 1] 内）

    Raises:
        ParseError: 行格式错误或分数越界
    """
    refinements: Dict[int, List[Detection]] = {}
    for lineno, values in _rows(text, 6):
        frame = _as_int(lineno, values[0], "帧号", 1) - 1
        score = values[5]
        if not 0.0 <= score <= 1.0:
            raise ParseError(lineno, f"精修分数必须位于 [0, 1]: {score}")
        box = _box(lineno, [values[0], 0.0] + values[1:5])
        refinements.setdefault(frame, []).append(Detection(box, score))
    return refinements


def _assemble(entries: List[Tuple[int, int, int, BBox, float]]) -> TrajectorySet:
    """按 (id, frame) 排序后组装轨迹，entries 元素为 (行号, id, frame, box, score)"""
    seen = set()
    trajectories = TrajectorySet()
    for lineno, track_id, frame, box, score in sorted(entries, key=lambda e: (e[1], e[2])):
        if (track_id, frame) in seen:
            raise ParseError(lineno, f"轨迹 {track_id} 在第 {frame + 1} 帧重复")
        seen.add((track_id, frame))
        trajectories.add_entry(track_id, frame, box, score)
    return trajectories


def parse_ground_truth(text: str, class_filter: Optional[Sequence[int]] = (1,),
                       min_visibility: float = 0.0) -> TrajectorySet:
    """
    解析真值文件

    active 标记为 0、类别不在 class_filter 中或可见度低于 min_visibility 的行被排除；
    缺少的可选列视为 active=1, class=1, visibility=1。

    Args:
        text: gt.txt 内容
        class_filter: 保留的类别，为 None 时不过滤
        min_visibility: 最小可见度

    Returns:
        TrajectorySet: 真值轨迹（分数均为 1.0）

    Raises:
        ParseError: 行格式错误或 (id, frame) 重复
    """
    entries = []
    for lineno, values in _rows(text, 6):
        frame = _as_int(lineno, values[0], "帧号", 1) - 1
        track_id = _as_int(lineno, values[1], "轨迹ID", 1)
        box = _box(lineno, values)
        active = values[6] if len(values) > 6 else 1.0
        cls = values[7] if len(values) > 7 else 1.0
        visibility = values[8] if len(values) > 8 else 1.0
        if active == 0:
            continue
        if class_filter is not None and int(cls) not in class_filter:
            continue
        if visibility < min_visibility:
            continue
        entries.append((lineno, track_id, frame, box, 1.0))
    return _assemble(entries)


def parse_results(text: str) -> TrajectorySet:
    """
    解析跟踪结果文件

    分数为 -1 表示未给出，记为 1.0。

    Raises:
        ParseError: 行格式错误、分数越界或 (id, frame) 重复
    """
    entries = []
    for lineno, values in _rows(text, 6):
        frame = _as_int(lineno, values[0], "帧号", 1) - 1
        track_id = _as_int(lineno, values[1], "轨迹ID", 1)
        score = values[6] if len(values) > 6 else 1.0
        if score == -1:
            score = 1.0
        if not 0.0 <= score <= 1.0:
            raise ParseError(lineno, f"分数必须位于 [0, 1] 或为 -1: {score}")
        entries.append((lineno, track_id, frame, _box(lineno, values), score))
    return _assemble(entries)


# ==================== 文本输出 ====================

def _fmt(value: float, digits: int) -> str:
    """定点格式化并去掉末尾多余的 0"""
    text = f"{value:.{digits}f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def _lines(rows: List[str]) -> str:
    return "\n".join(rows) + "\n" if rows else ""


def write_results(trajectories: TrajectorySet) -> str:
    """输出 MOT 结果文本，按帧、ID排序"""
    rows = []
    for frame, track_id, x, y, w, h, score in trajectories.to_rows():
        rows.append(",".join([
            str(frame + 1), str(track_id),
            _fmt(x + 1, COORD_DIGITS), _fmt(y + 1, COORD_DIGITS),
            _fmt(w, COORD_DIGITS), _fmt(h, COORD_DIGITS),
            _fmt(score, SCORE_DIGITS), "-1", "-1", "-1",
        ]))
    return _lines(rows)


def write_detections(detections: Mapping[int, Sequence[Detection]]) -> str:
    """输出检测文件文本，按帧排序，帧内保持顺序"""
    rows = []
    for frame in sorted(detections):
        for det in detections[frame]:
            b = det.box
            rows.append(",".join([
                str(frame + 1), "-1",
                _fmt(b.x + 1, COORD_DIGITS), _fmt(b.y + 1, COORD_DIGITS),
                _fmt(b.w, COORD_DIGITS), _fmt(b.h, COORD_DIGITS),
                _fmt(det.score, SCORE_DIGITS), "-1", "-1", "-1",
            ]))
    return _lines(rows)


def write_ground_truth(trajectories: TrajectorySet) -> str:
    """输出真值文件文本（active=1, class=1, visibility=1）"""
    rows = []
    for frame, track_id, x, y, w, h, _ in trajectories.to_rows():
        rows.append(",".join([
            str(frame + 1), str(track_id),
            _fmt(x + 1, COORD_DIGITS), _fmt(y + 1, COORD_DIGITS),
            _fmt(w, COORD_DIGITS), _fmt(h, COORD_DIGITS),
            "1", "1", "1",
        ]))
    return _lines(rows)


# ==================== 光流文件 ====================

def read_flow(data: bytes) -> FlowField:
    """
    解析 .flo 光流数据

    Raises:
        TruncatedFile: 数据长度不足
        BadMagic: 魔数错误
        FlowFormatError: 尺寸非法或存在多余字节
        NonFiniteValue: 存在 NaN / Inf
    """
    if len(data) < FLO_HEADER_BYTES:
        raise TruncatedFile(f"光流文件头不完整: {len(data)} 字节")
    magic = np.frombuffer(data, dtype="<f4", count=1, offset=0)[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagic(f"光流文件魔数错误: {magic}")
    width, height = (int(v) for v in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"光流尺寸非法: {width}x{height}")
    expected = FLO_HEADER_BYTES + 8 * width * height
    if len(data) < expected:
        raise TruncatedFile(f"光流数据不完整: {len(data)} < {expected} 字节")
    if len(data) > expected:
        raise FlowFormatError(f"光流文件存在多余字节: {len(data) - expected}")
    values = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=FLO_HEADER_BYTES)
    if not np.isfinite(values).all():
        raise NonFiniteValue("光流数据中存在非有限值")
    grid = values.reshape(height, width, 2)
    return FlowField(width, height, grid[:, :, 0], grid[:, :, 1])


def write_flow(flow: FlowField) -> bytes:
    """
    输出 .flo 数据（数值按 float32 存储）

    Raises:
        NonFiniteValue: 数值超出 float32 范围
    """
    grid = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    if not np.isfinite(grid).all():
        raise NonFiniteValue("光流数值超出 float32 范围")
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes() + np.array([flow.width, flow.height], dtype="<i4").tobytes()
    return header + grid.tobytes()


def read_flow_file(path: Path) -> FlowField:
    with open(path, "rb") as f:
        return read_flow(f.read())


def flow_file_name(frame: int, depth: int) -> str:
    """0 起始帧号 frame、深度 depth 的光流文件名（文件中为1起始）"""
    return f"{frame + 1:06d}_{frame + 1 - depth:06d}.flo"


def discover_flows(flow_dir: Path) -> Dict[Tuple[int, int], Path]:
    """
    扫描光流目录

    Returns:
        Dict[Tuple[int, int], Path]: (0 起始帧号, 深度) -> 文件路径
    """
    found = {}
    for path in sorted(Path(flow_dir).glob("*.flo")):
        match = FLOW_FILE_PATTERN.match(path.name)
        if not match:
            logger.warning("忽略无法识别的光流文件", path=str(path))
            continue
        current, source = int(match.group(1)), int(match.group(2))
        if current < 1 or source < 1 or source >= current:
            logger.warning("忽略帧号非法的光流文件", path=str(path))
            continue
        found[(current - 1, current - source)] = path
    return found


class FlowFileMap(Mapping):
    """深度 -> 光流场 的惰性映射，访问时才读取文件"""

    def __init__(self, paths: Mapping[int, Path]):
        self._paths = dict(paths)
        self._cache: Dict[int, FlowField] = {}

    def __getitem__(self, depth: int) -> FlowField:
        if depth not in self._cache:
            self._cache[depth] = read_flow_file(self._paths[depth])
        return self._cache[depth]

    def __iter__(self):
        return iter(sorted(self._paths))

    def __len__(self) -> int:
        return len(self._paths)


# ==================== 回放序列 ====================

@dataclass
class ReplaySequence:
    """磁盘上的一段序列：检测 + 光流文件 + 可选的序列信息"""

    name: str
    num_frames: int
    detections: Dict[int, List[Detection]]
    flow_paths: Dict[Tuple[int, int], Path] = field(default_factory=dict)
    seq_info: Optional[SeqInfo] = None

    @property
    def frame_rate(self) -> Optional[float]:
        return self.seq_info.frame_rate if self.seq_info else None

    def bundles(self, max_depth: int) -> Iterator[FrameBundle]:
        """逐帧生成输入，光流在使用时才读取"""
        for t in range(self.num_frames):
            flow = None
            if t > 0 and (t, 1) in self.flow_paths:
                flow = read_flow_file(self.flow_paths[(t, 1)])
            lookback = {d: self.flow_paths[(t, d)] for d in range(2, max_depth + 1)
                        if (t, d) in self.flow_paths}
            yield FrameBundle(t, flow, FlowFileMap(lookback), list(self.detections.get(t, [])))


def load_replay_sequence(seq_dir: Optional[str] = None, det_path: Optional[str] = None,
                         flow_dir: Optional[str] = None, require_flow: bool = True
                         ) -> Tuple[Optional[ReplaySequence], Optional[Exception]]:
    """
    加载回放序列

    seq_dir 下按 MOTChallenge 布局查找 seqinfo.ini、det/det.txt、flow/，
    det_path / flow_dir 显式给出时优先。

    Returns:
        Tuple[Optional[ReplaySequence], Optional[Exception]]: (序列, 错误)，二者必有一个为 None
    """
    try:
        root = Path(seq_dir) if seq_dir else None
        seq_info = None
        if root is not None and (root / "seqinfo.ini").exists():
            seq_info = parse_seqinfo(read_text_file(root / "seqinfo.ini"))

        det_file = Path(det_path) if det_path else (root / "det" / "det.txt" if root else None)
        if det_file is None:
            raise ParseError(None, "未指定检测文件")
        detections = parse_detections(read_text_file(det_file))

        flows_root = Path(flow_dir) if flow_dir else (root / "flow" if root else None)
        flow_paths: Dict[Tuple[int, int], Path] = {}
        if flows_root is not None and flows_root.is_dir():
            flow_paths = discover_flows(flows_root)
        elif require_flow:
            raise MissingFlow(f"光流目录不存在: {flows_root}")

        if seq_info is not None:
            num_frames = seq_info.seq_length
        else:
            last = max(list(detections) + [t for t, _ in flow_paths] + [-1])
            num_frames = last + 1
        name = seq_info.name if seq_info and seq_info.name else (root.name if root else det_file.stem)
        logger.info("序列加载完成", name=name, frames=num_frames,
                    detections=sum(len(v) for v in detections.values()), flows=len(flow_paths))
        return ReplaySequence(name, num_frames, detections, flow_paths, seq_info), None
    except (TrackerError, OSError) as e:
        logger.error("序列加载失败", seq_dir=seq_dir, error=str(e))
        return None, e
