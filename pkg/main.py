#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Flow-Fuse 跟踪命令行入口

子命令：
- track：在回放序列或合成序列上运行跟踪，输出 MOT 结果文件
- eval：对结果文件做 CLEAR MOT / 身份指标评估
- synth：生成合成序列并按 MOTChallenge 布局保存
- ablate-bt：回溯帧数消融（1, 10, 20, 30）
- ablate-components：组件消融（full / no-flow / no-fuse）
- render：把结果渲染为逐帧 PPM 图片
- flow-diag：多采样率下的目标运动回归误差
- analyze：按可见度与目标高度统计跟踪成功率
"""

import argparse
import asyncio
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from dataset.mot_io import (load_replay_sequence, parse_ground_truth, parse_results, parse_seqinfo, read_text_file,
                            write_ground_truth, write_results)
from dataset.synth import (BoxJitter, DEFAULT_RATES, analytic_flow, clean_suite, generate,
                           occlusion_suite, pair_sampling, save_synth_sequence)
from evaluation.metrics import (aggregate, breakdown, clear_mot, evaluate, format_breakdown,
                                format_report_table, MotReport)
from evaluation.render import render_sequence
from tracker.core import Detection, Motion, TrajectorySet, clip_to_frame
from tracker.flow_tracker import MotionEstimatorConfig, motion_regression_error, pool_motion
from tracker.pipeline import FrameBundle, PipelineConfig, pipeline_config_from_mapping, run
from tracker.refiner import build_refiner
from utils import tools
from utils.errors import (ConfigError, FlowFormatError, FrameRangeMismatch, MissingFlow, ParseError,
                          SequenceMismatch, TooFewSamples, TrackerError)
from utils.log import init_logger_from_config, logger, set_log_level
from utils.settings import settings


DEFAULT_REFINER = "overlap"
ABLATION_BT_FRAMES = (1, 10, 20, 30)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_MISSING_FLOW = 4
EXIT_MISMATCH = 5
EXIT_IO = 6


def exit_code_for(error: BaseException) -> int:
    """异常 -> 退出码"""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (ParseError, FlowFormatError)):
        return EXIT_PARSE
    if isinstance(error, MissingFlow):
        return EXIT_MISSING_FLOW
    if isinstance(error, (FrameRangeMismatch, SequenceMismatch)):
        return EXIT_MISMATCH
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_ERROR


# ==================== 配置合并 ====================

TRACKER_FLAGS = ("thresh_score", "thresh_iou", "thresh_nms", "bt_frames", "refiner")


def resolve_pipeline_config(args: argparse.Namespace, file_config: Mapping[str, Any],
                            fps: Optional[float] = None) -> Tuple[PipelineConfig, str]:
    """
    合并跟踪参数：命令行 > 配置文件 > 默认值

    Returns:
        Tuple[PipelineConfig, str]: (流水线参数, 精修器描述)

    Raises:
        ConfigError: 配置项未知或取值非法
    """
    merged: Dict[str, Any] = dict(file_config)
    for name in TRACKER_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    refiner = merged.pop("refiner", None) or DEFAULT_REFINER
    return pipeline_config_from_mapping(merged, fps), str(refiner)


# ==================== 序列任务 ====================

@dataclass
class SequenceJob:
    """一段待跟踪的序列"""

    name: str
    detections: Dict[int, List[Detection]]
    num_frames: int
    bundles: Callable[[int], Iterable[FrameBundle]]
    frame_rate: Optional[float] = None
    gt: Optional[TrajectorySet] = None


def _synth_jobs(suite: str, synth_config: Mapping[str, Any]) -> List[SequenceJob]:
    builders = {"clean": clean_suite, "occlusion": occlusion_suite}
    if suite not in builders:
        raise ConfigError(f"未知的合成序列组: {suite}")
    specs = builders[suite](int(synth_config["sequences"]), int(synth_config["targets"]),
                            int(synth_config["frames"]), int(synth_config["seed"]))
    jobs = []
    for spec in specs:
        sequence = generate(spec)
        jobs.append(SequenceJob(sequence.name, sequence.detections, spec.num_frames,
                                lambda _depth, s=sequence: s.bundles, spec.frame_rate, sequence.gt))
    return jobs


def _replay_jobs(seq_dirs: Sequence[str], det: Optional[str], flow_dir: Optional[str]
                 ) -> Tuple[List[SequenceJob], List[Exception]]:
    if not seq_dirs and not det:
        raise ConfigError("需要 --seq、--det 或 --synth 之一")
    if len(seq_dirs) > 1 and (det or flow_dir):
        raise ConfigError("--det / --flow-dir 只能与单个 --seq 一起使用")
    jobs, errors = [], []
    for seq_dir in (seq_dirs or [None]):
        sequence, error = load_replay_sequence(seq_dir, det, flow_dir)
        if error:
            errors.append(error)
            continue
        gt = None
        gt_file = Path(seq_dir) / "gt" / "gt.txt" if seq_dir else None
        if gt_file is not None and gt_file.exists():
            gt = parse_ground_truth(read_text_file(gt_file))
        jobs.append(SequenceJob(sequence.name, sequence.detections, sequence.num_frames,
                                sequence.bundles, sequence.frame_rate, gt))
    return jobs, errors


def _collect_jobs(args: argparse.Namespace) -> Tuple[List[SequenceJob], List[Exception]]:
    if getattr(args, "synth", None):
        synth_config = settings.get_synth_config()
        if getattr(args, "seed", None) is not None:
            synth_config["seed"] = args.seed
        return _synth_jobs(args.synth, synth_config), []
    return _replay_jobs(getattr(args, "seq", None) or [], getattr(args, "det", None),
                        getattr(args, "flow_dir", None))


def track_job(job: SequenceJob, cfg: PipelineConfig, refiner_spec: str) -> TrajectorySet:
    """在单个序列上运行流水线"""
    refiner = build_refiner(refiner_spec, job.detections)
    start = tools.get_cur_timestamp_ms()
    result = run(job.bundles(cfg.bt_frames), refiner, cfg)
    logger.info("序列跟踪完成", name=job.name, frames=job.num_frames, tracks=len(result),
                entries=result.num_entries, elapsed_ms=tools.get_cur_timestamp_ms() - start)
    return result


async def track_all(jobs: Sequence[SequenceJob],
                    configure: Callable[[SequenceJob], Tuple[PipelineConfig, str]]) -> List[TrajectorySet]:
    """各序列并发跟踪，单个序列内部保持单线程"""
    tasks = []
    for job in jobs:
        cfg, refiner_spec = configure(job)
        tasks.append(asyncio.to_thread(track_job, job, cfg, refiner_spec))
    return list(await asyncio.gather(*tasks))


async def evaluate_all(pairs: Sequence[Tuple[str, TrajectorySet, TrajectorySet, Optional[int]]],
                       iou_thresh: float) -> List[MotReport]:
    """各序列并发评估"""
    tasks = [asyncio.to_thread(evaluate, gt, pred, name, iou_thresh, num_frames)
             for name, gt, pred, num_frames in pairs]
    return list(await asyncio.gather(*tasks))


def _emit(text: str, out: Optional[str]) -> None:
    print(text, end="")
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info("结果已写入", path=str(path))


# ==================== 子命令 ====================

def cmd_track(args: argparse.Namespace) -> int:
    file_config = settings.get_tracker_config()
    jobs, errors = _collect_jobs(args)
    configured = {job.name: resolve_pipeline_config(args, file_config, job.frame_rate) for job in jobs}
    for name, (cfg, refiner_spec) in configured.items():
        logger.info("跟踪参数", name=name, refiner=refiner_spec, **cfg.to_dict())

    results = asyncio.run(track_all(jobs, lambda job: configured[job.name]))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for job, result in zip(jobs, results):
        (out_dir / f"{job.name}.txt").write_text(write_results(result), encoding="utf-8")
        if args.synth and job.gt is not None:
            (out_dir / "gt").mkdir(exist_ok=True)
            (out_dir / "gt" / f"{job.name}.txt").write_text(write_ground_truth(job.gt), encoding="utf-8")
    # 记录每个序列实际使用的参数
    tools.dump_json({name: {"refiner": refiner_spec, **cfg.to_dict()}
                     for name, (cfg, refiner_spec) in configured.items() if name in {j.name for j in jobs}},
                    out_dir.resolve() / "run.json")
    logger.info("跟踪结果已写入", out_dir=str(out_dir), sequences=len(results))

    if errors:
        return exit_code_for(errors[0])
    return EXIT_OK


def _sequence_names(path: Path) -> Dict[str, Tuple[Path, Optional[Path]]]:
    """目录下的序列：<name>.txt 或 <name>/gt/gt.txt（附带 seqinfo.ini）"""
    found: Dict[str, Tuple[Path, Optional[Path]]] = {}
    for item in sorted(path.iterdir()):
        if item.is_file() and item.suffix == ".txt":
            found[item.stem] = (item, None)
        elif item.is_dir() and (item / "gt" / "gt.txt").exists():
            info = item / "seqinfo.ini"
            found[item.name] = (item / "gt" / "gt.txt", info if info.exists() else None)
    return found


def _eval_pairs(results: str, gt: str) -> List[Tuple[str, Path, Path, Optional[Path]]]:
    results_path, gt_path = Path(results), Path(gt)
    if results_path.is_dir():
        if not gt_path.is_dir():
            raise ConfigError("--results 为目录时 --gt 也必须是目录")
        predicted = {p.stem: p for p in sorted(results_path.glob("*.txt"))}
        truths = _sequence_names(gt_path)
        if set(predicted) != set(truths):
            raise SequenceMismatch(f"结果与真值的序列不一致: 结果 {sorted(predicted)}, 真值 {sorted(truths)}")
        return [(name, predicted[name], truths[name][0], truths[name][1]) for name in sorted(predicted)]

    if gt_path.is_dir():
        info = gt_path / "seqinfo.ini"
        return [(results_path.stem, results_path, gt_path / "gt" / "gt.txt", info if info.exists() else None)]
    return [(results_path.stem, results_path, gt_path, None)]


def _load_pair(name: str, results: Path, gt: Path, info: Optional[Path]
               ) -> Tuple[str, TrajectorySet, TrajectorySet, Optional[int]]:
    eval_config = settings.get_eval_config()
    class_filter = eval_config.get("class_filter", [1])
    truth = parse_ground_truth(read_text_file(gt),
                               tuple(class_filter) if class_filter is not None else None,
                               float(eval_config.get("min_visibility", 0.0)))
    predicted = parse_results(read_text_file(results))
    num_frames = parse_seqinfo(read_text_file(info)).seq_length if info else None
    return name, truth, predicted, num_frames


def cmd_eval(args: argparse.Namespace) -> int:
    iou_thresh = float(settings.get_eval_config()["iou_thresh"])
    pairs = [_load_pair(*item) for item in _eval_pairs(args.results, args.gt)]
    reports = asyncio.run(evaluate_all(pairs, iou_thresh))
    if len(reports) > 1:
        reports.append(aggregate(reports))
    _emit(format_report_table(reports), args.out)
    return EXIT_OK


def _ablation_jobs(args: argparse.Namespace) -> List[SequenceJob]:
    if not getattr(args, "seq", None) and not args.synth:
        args.synth = "occlusion"
    jobs, errors = _collect_jobs(args)
    if errors:
        raise errors[0]
    missing = [job.name for job in jobs if job.gt is None]
    if missing:
        raise ConfigError(f"消融实验需要真值: {missing}")
    return jobs


def _ablation_rows(jobs: Sequence[SequenceJob], variants: Sequence[Tuple[str, Callable[[SequenceJob], Tuple[PipelineConfig, str]]]],
                   iou_thresh: float) -> List[MotReport]:
    rows = []
    for label, configure in variants:
        results = asyncio.run(track_all(jobs, configure))
        pairs = [(job.name, job.gt, result, job.num_frames) for job, result in zip(jobs, results)]
        reports = asyncio.run(evaluate_all(pairs, iou_thresh))
        rows.append(aggregate(reports, name=label))
        logger.info("消融结果", variant=label, mota=rows[-1].mota, idf1=rows[-1].idf1, idsw=rows[-1].idsw)
    return rows


def cmd_ablate_bt(args: argparse.Namespace) -> int:
    file_config = settings.get_tracker_config()
    jobs = _ablation_jobs(args)
    iou_thresh = float(settings.get_eval_config()["iou_thresh"])

    def variant(bt_frames: int):
        def configure(job: SequenceJob) -> Tuple[PipelineConfig, str]:
            cfg, refiner_spec = resolve_pipeline_config(args, file_config, job.frame_rate)
            return replace(cfg, bt_frames=bt_frames), refiner_spec
        return f"FFT-BT{bt_frames}", configure

    rows = _ablation_rows(jobs, [variant(bt) for bt in ABLATION_BT_FRAMES], iou_thresh)
    _emit(format_report_table(rows), args.out)
    return EXIT_OK


def cmd_ablate_components(args: argparse.Namespace) -> int:
    file_config = settings.get_tracker_config()
    jobs = _ablation_jobs(args)
    iou_thresh = float(settings.get_eval_config()["iou_thresh"])

    def full(job: SequenceJob) -> Tuple[PipelineConfig, str]:
        return resolve_pipeline_config(args, file_config, job.frame_rate)

    def no_flow(job: SequenceJob) -> Tuple[PipelineConfig, str]:
        cfg, refiner_spec = full(job)
        return replace(cfg, use_flow=False), refiner_spec

    def no_fuse(job: SequenceJob) -> Tuple[PipelineConfig, str]:
        cfg, _ = full(job)
        return replace(cfg, fuse=replace(cfg.fuse, prefer_detections=True)), "overlap"

    rows = _ablation_rows(jobs, [("full", full), ("no-flow", no_flow), ("no-fuse", no_fuse)], iou_thresh)
    _emit(format_report_table(rows), args.out)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    synth_config = settings.get_synth_config()
    if args.seed is not None:
        synth_config["seed"] = args.seed
    for key in ("sequences", "targets", "frames", "flow_depth"):
        value = getattr(args, key, None)
        if value is not None:
            synth_config[key] = value
    builders = {"clean": clean_suite, "occlusion": occlusion_suite}
    specs = builders[args.suite](int(synth_config["sequences"]), int(synth_config["targets"]),
                                 int(synth_config["frames"]), int(synth_config["seed"]))
    for spec in specs:
        save_synth_sequence(generate(spec), args.out, int(synth_config["flow_depth"]))
    logger.info("合成数据已保存", out_dir=args.out, sequences=len(specs), suite=args.suite)
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    results = parse_results(read_text_file(args.results))
    if args.seq:
        info = parse_seqinfo(read_text_file(Path(args.seq) / "seqinfo.ini"))
        width, height, num_frames = info.width, info.height, info.seq_length
    else:
        if not (args.width and args.height):
            raise ConfigError("render 需要 --seq 或 --width/--height")
        width, height = args.width, args.height
        num_frames = args.frames or (max(results.frames()) + 1 if len(results) else 1)
    render_sequence(results, width, height, num_frames, args.out)
    return EXIT_OK


def cmd_flow_diag(args: argparse.Namespace) -> int:
    synth_config = settings.get_synth_config()
    seed = args.seed if args.seed is not None else int(synth_config["seed"])
    frames = args.frames or int(synth_config["frames"])
    spec = clean_suite(1, int(synth_config["targets"]), frames, seed)[0]
    jitter = BoxJitter(seed)
    motion_cfg = MotionEstimatorConfig()

    lines = ["rate\tpairs\tsamples\tmean_error"]
    for rate in DEFAULT_RATES:
        predicted: List[Motion] = []
        truth: List[Motion] = []
        pairs = pair_sampling(frames, (rate,))
        for t0, t1 in pairs:
            flow = analytic_flow(spec, t1, t1 - t0)
            for target in spec.targets:
                src, dst = target.box_at(t0), target.box_at(t1)
                box = clip_to_frame(jitter.jitter(src), spec.width, spec.height)
                try:
                    predicted.append(pool_motion(flow, box, motion_cfg))
                except TooFewSamples:
                    continue
                truth.append(Motion(dst.x - box.x, dst.y - box.y, dst.w - box.w, dst.h - box.h))
        error = motion_regression_error(predicted, truth) / max(1, len(truth))
        lines.append(f"{rate}\t{len(pairs)}\t{len(truth)}\t{error:.6f}")
    logger.info("光流诊断完成", jitter_draws=jitter.draws, jitter_fallbacks=jitter.fallbacks)
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    iou_thresh = float(settings.get_eval_config()["iou_thresh"])
    (name, results, gt, info), *rest = _eval_pairs(args.results, args.gt)
    if rest:
        raise ConfigError("analyze 只支持单个序列")
    _, truth, predicted, num_frames = _load_pair(name, results, gt, info)
    counts = clear_mot(truth, predicted, iou_thresh, num_frames)
    _emit(format_breakdown(breakdown(truth, counts)), args.out)
    return EXIT_OK


# ==================== 参数解析 ====================

def _add_tracker_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--thresh-score", type=float, default=None, help="精修分数淘汰阈值")
    parser.add_argument("--thresh-iou", type=float, default=None, help="跟踪与检测匹配的 IoU 阈值")
    parser.add_argument("--thresh-nms", type=float, default=None, help="NMS 阈值")
    parser.add_argument("--bt-frames", type=int, default=None, help="最大回溯帧数")
    parser.add_argument("--refiner", default=None, help="identity | overlap | file:<path>")


def _add_source_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seq", nargs="+", default=None, help="MOTChallenge 序列目录")
    parser.add_argument("--det", default=None, help="检测文件（覆盖 <seq>/det/det.txt）")
    parser.add_argument("--flow-dir", default=None, help="光流目录（覆盖 <seq>/flow）")
    parser.add_argument("--synth", choices=("clean", "occlusion"), default=None, help="使用合成序列组")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fft", description="Flow-Fuse 多目标跟踪")
    parser.add_argument("--config", default=None, help="配置文件路径（默认 config/app.yaml）")
    parser.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")
    parser.add_argument("--seed", type=int, default=None, help="随机种子")
    sub = parser.add_subparsers(dest="command", required=True)

    track = sub.add_parser("track", help="运行跟踪")
    _add_source_flags(track)
    _add_tracker_flags(track)
    track.add_argument("--out", required=True, help="结果输出目录")
    track.set_defaults(handler=cmd_track)

    ev = sub.add_parser("eval", help="评估结果")
    ev.add_argument("--results", required=True, help="结果文件或目录")
    ev.add_argument("--gt", required=True, help="真值文件或目录")
    ev.add_argument("--out", default=None, help="指标表输出路径")
    ev.set_defaults(handler=cmd_eval)

    synth = sub.add_parser("synth", help="生成合成数据")
    synth.add_argument("--suite", choices=("clean", "occlusion"), default="clean")
    synth.add_argument("--sequences", type=int, default=None)
    synth.add_argument("--targets", type=int, default=None)
    synth.add_argument("--frames", type=int, default=None)
    synth.add_argument("--flow-depth", type=int, default=None, help="保存的光流深度 1..N")
    synth.add_argument("--out", required=True, help="输出目录")
    synth.set_defaults(handler=cmd_synth)

    for name, handler, text in (("ablate-bt", cmd_ablate_bt, "回溯帧数消融"),
                                ("ablate-components", cmd_ablate_components, "组件消融")):
        ablate = sub.add_parser(name, help=text)
        _add_source_flags(ablate)
        _add_tracker_flags(ablate)
        ablate.add_argument("--out", default=None, help="表格输出路径")
        ablate.set_defaults(handler=handler)

    render = sub.add_parser("render", help="渲染结果")
    render.add_argument("--results", required=True)
    render.add_argument("--seq", default=None, help="序列目录（读取 seqinfo.ini）")
    render.add_argument("--width", type=int, default=None)
    render.add_argument("--height", type=int, default=None)
    render.add_argument("--frames", type=int, default=None)
    render.add_argument("--out", required=True, help="图片输出目录")
    render.set_defaults(handler=cmd_render)

    diag = sub.add_parser("flow-diag", help="光流运动回归诊断")
    diag.add_argument("--frames", type=int, default=None)
    diag.add_argument("--out", default=None)
    diag.set_defaults(handler=cmd_flow_diag)

    analyze = sub.add_parser("analyze", help="可见度 / 尺寸分析")
    analyze.add_argument("--results", required=True)
    analyze.add_argument("--gt", required=True)
    analyze.add_argument("--out", default=None)
    analyze.set_defaults(handler=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            settings.load_file(args.config)
        init_logger_from_config()
        if args.verbose:
            set_log_level("DEBUG")
        logger.info("开始执行", command=args.command)
        start = tools.get_cur_timestamp_ms()
        code = args.handler(args)
        logger.info("执行结束", command=args.command, exit_code=code,
                    elapsed_ms=tools.get_cur_timestamp_ms() - start)
        return code
    except (TrackerError, OSError) as e:
        logger.error(f"{args.command} 执行失败: {e}", error_type=type(e).__name__)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
