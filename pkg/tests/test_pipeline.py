# -*- coding: utf-8 -*-

from dataclasses import replace

import numpy as np
import pytest

from dataset.synth import NoiseSpec, SynthSpec, SynthTarget, clean_suite, generate, occlusion_suite
from evaluation.metrics import evaluate
from tracker.core import BBox, Detection, TrajectorySet, iou_matrix
from tracker.flow_tracker import FlowField
from tracker.pipeline import (FrameBundle, PipelineConfig, backtrack, bt_frames_for_fps, init,
                              pipeline_config_from_mapping, run, step)
from tracker.refiner import IdentityRefiner, OverlapRefiner, build_refiner
from utils.errors import ConfigError, MissingFlow, PipelineError


class FixedRefiner:
    name = "fixed"

    def __init__(self, tracked_score):
        self.tracked_score = tracked_score

    def refine(self, frame, proposals):
        return [(p.box, self.tracked_score if p.track_id is not None else p.score) for p in proposals]


W = H = 64
CFG = PipelineConfig()


def uniform(u, v=0.0):
    return FlowField.uniform(W, H, u, v)


def single_track(box=BBox(10, 10, 20, 20), score=0.9):
    tracks = TrajectorySet()
    tracks.new_trajectory(0, box, score)
    return tracks


@pytest.mark.parametrize("fps, expected", [(None, 30), (2.5, 3), (7, 10), (10, 10), (14, 30), (30, 30)])
def test_bt_frames_for_fps(fps, expected):
    assert bt_frames_for_fps(fps) == expected


def test_config_from_mapping_defaults_and_fps():
    cfg = pipeline_config_from_mapping({"thresh_nms": 0.4, "bt_frames": None, "refiner": "overlap"}, fps=2.5)
    assert cfg.fuse.thresh_nms == 0.4
    assert cfg.fuse.thresh_score == 0.5
    assert cfg.bt_frames == 3
    assert pipeline_config_from_mapping({"bt_frames": 20}, fps=2.5).bt_frames == 20


@pytest.mark.parametrize("values", [{"unknown": 1}, {"thresh_iou": 2.0}, {"bt_frames": 0}, {"scale_mode": "x"}])
def test_config_from_mapping_errors(values):
    with pytest.raises(ConfigError):
        pipeline_config_from_mapping(values)


def test_frame_bundle_validation():
    with pytest.raises(PipelineError):
        FrameBundle(-1)
    with pytest.raises(PipelineError):
        FrameBundle(3, lookback_flows={1: uniform(0)})


def test_init_empty():
    tracks = init(FrameBundle(0), IdentityRefiner(), CFG)
    assert len(tracks) == 0
    assert tracks.next_id == 1


def test_init_disjoint_detections():
    detections = [Detection(BBox(i * 20, 0, 10, 10), 0.9) for i in range(3)]
    tracks = init(FrameBundle(0, detections=detections), IdentityRefiner(), CFG)
    assert tracks.ids == [1, 2, 3]
    assert [t.box for t in tracks.targets_at(0)] == [d.box for d in detections]


def test_init_suppresses_duplicates():
    box = BBox(0, 0, 10, 10)
    tracks = init(FrameBundle(0, detections=[Detection(box, 0.9), Detection(box, 0.8)]), IdentityRefiner(), CFG)
    assert len(tracks) == 1
    assert tracks.targets_at(0)[0].score == 0.9


def test_init_kills_low_score_detection_with_overlap_refiner():
    weak, strong = Detection(BBox(0, 0, 10, 10), 0.1), Detection(BBox(40, 0, 10, 10), 0.7)
    refiner = OverlapRefiner({0: [weak, strong]})
    tracks = init(FrameBundle(0, detections=[weak, strong]), refiner, CFG)
    assert tracks.ids == [1]
    assert tracks.targets_at(0)[0].box == strong.box
    assert tracks.targets_at(0)[0].score == 0.7


def test_init_requires_frame_zero():
    with pytest.raises(PipelineError):
        init(FrameBundle(1), IdentityRefiner(), CFG)


def test_step_follows_detection():
    tracks = single_track()
    shifted = BBox(13, 8, 20, 20)
    bundle = FrameBundle(1, uniform(3, -2), detections=[Detection(shifted, 0.95)])
    step(tracks, bundle, FixedRefiner(0.8), CFG)
    assert tracks.ids == [1]
    assert tracks[1].get(1) == (shifted, 0.95)


def test_step_persists_without_detections():
    tracks = single_track()
    step(tracks, FrameBundle(1, uniform(3, -2)), FixedRefiner(0.8), CFG)
    box, score = tracks[1].get(1)
    assert box.as_tuple() == pytest.approx((13.0, 8.0, 20.0, 20.0))
    assert score == 0.8


def test_step_mints_new_trajectory_for_far_detection():
    tracks = single_track()
    far = Detection(BBox(45, 45, 10, 10), 0.9)
    step(tracks, FrameBundle(1, uniform(0), detections=[far]), FixedRefiner(0.8), CFG)
    assert tracks.ids == [1, 2]
    assert tracks[2].get(1) == (far.box, 0.9)
    assert tracks.next_id == 3


def test_step_without_flow_raises():
    with pytest.raises(MissingFlow):
        step(single_track(), FrameBundle(1), FixedRefiner(0.8), CFG)


def test_step_without_flow_when_flow_disabled():
    tracks = single_track()
    cfg = PipelineConfig(use_flow=False)
    step(tracks, FrameBundle(1), FixedRefiner(0.8), cfg)
    assert tracks[1].get(1) == (BBox(10, 10, 20, 20), 0.8)


def occlusion_bundles(gap_frames=1):
    """目标在第 0 帧出现，中间 gap_frames 帧无检测，随后在光流推进后的位置重新出现"""
    start = BBox(10, 10, 20, 20)
    reappear = gap_frames + 1
    end = start.shifted(reappear, 0)
    detections = {0: [Detection(start, 1.0)], reappear: [Detection(end, 1.0)]}
    bundles = []
    for t in range(reappear + 1):
        lookback = {d: uniform(d) for d in range(2, t + 1)}
        bundles.append(FrameBundle(t, uniform(1) if t else None, lookback, list(detections.get(t, []))))
    return bundles, detections


def test_backtrack_revives_occluded_target():
    bundles, detections = occlusion_bundles(gap_frames=1)
    tracks = run(bundles, OverlapRefiner(detections), PipelineConfig(bt_frames=3))
    assert tracks.ids == [1]
    assert tracks[1].frames == [0, 2]
    assert tracks[1].get(2)[0] == BBox(12, 10, 20, 20)


def test_backtrack_spans_longer_gap():
    bundles, detections = occlusion_bundles(gap_frames=4)
    tracks = run(bundles, OverlapRefiner(detections), PipelineConfig(bt_frames=10))
    assert tracks.ids == [1]
    assert tracks[1].frames == [0, 5]


def test_backtrack_disabled_mints_new_id():
    bundles, detections = occlusion_bundles(gap_frames=1)
    tracks = run(bundles, OverlapRefiner(detections), PipelineConfig(bt_frames=1))
    assert tracks.ids == [1, 2]
    assert tracks[2].frames == [2]


def test_backtrack_gap_longer_than_bt_frames():
    bundles, detections = occlusion_bundles(gap_frames=4)
    tracks = run(bundles, OverlapRefiner(detections), PipelineConfig(bt_frames=3))
    assert tracks.ids == [1, 2]


def test_backtrack_without_unmatched_is_noop():
    tracks = single_track()
    before = tracks.to_rows()
    revived, remaining = backtrack(tracks, tracks.without_entry_at(2), [], FrameBundle(2), IdentityRefiner(), CFG)
    assert (revived, remaining) == ([], [])
    assert tracks.to_rows() == before


def test_backtrack_skips_missing_depth():
    tracks = single_track()
    det = Detection(BBox(12, 10, 20, 20), 1.0)
    refiner = OverlapRefiner({2: [det]})
    revived, remaining = backtrack(tracks, tracks.without_entry_at(2), [det], FrameBundle(2), refiner, CFG)
    assert revived == []
    assert remaining == [det]


def test_run_single_frame_equals_init():
    detections = [Detection(BBox(0, 0, 10, 10), 0.9)]
    assert run([FrameBundle(0, detections=detections)], IdentityRefiner(), CFG) == \
        init(FrameBundle(0, detections=detections), IdentityRefiner(), CFG)


def test_run_requires_consecutive_frames():
    with pytest.raises(PipelineError):
        run([FrameBundle(0), FrameBundle(2)], IdentityRefiner(), CFG)


def test_run_empty():
    assert len(run([], IdentityRefiner(), CFG)) == 0


def test_clean_synthetic_sequence_is_reproduced():
    spec = clean_suite(1, 4, 30, seed=3)[0]
    sequence = generate(spec)
    result = run(sequence.bundles, OverlapRefiner(sequence.detections), CFG)
    report = evaluate(sequence.gt, result, num_frames=spec.num_frames)
    assert report.mota == 1.0
    assert report.idf1 == 1.0
    assert report.idsw == 0
    assert result.ids == sequence.gt.ids


def test_synthetic_occlusion_spanned_by_backtracking():
    target = SynthTarget(BBox(20, 20, 20, 40), velocity=(1.0, 0.5), occlusions=((5, 7),))
    spec = SynthSpec(15, 128, 96, (target,))
    sequence = generate(spec)
    result = run(sequence.bundles, OverlapRefiner(sequence.detections), PipelineConfig(bt_frames=3))
    assert result.ids == [1]
    assert result[1].frames == [f for f in range(15) if f not in (5, 6)]


@pytest.mark.parametrize("refiner_spec", ["overlap", "identity"])
def test_output_boxes_never_overlap_across_ids(refiner_spec):
    noise = NoiseSpec(center_std=0.05, size_std=0.05, score_range=(0.3, 1.0), fp_rate=1.5, miss_rate=0.1)
    for spec in occlusion_suite(3, 8, 40, seed=2):
        sequence = generate(replace(spec, noise=noise))
        result = run(sequence.bundles, build_refiner(refiner_spec, sequence.detections), PipelineConfig(bt_frames=10))
        for frame in result.frames():
            boxes = [t.box for t in result.targets_at(frame)]
            if len(boxes) < 2:
                continue
            overlaps = iou_matrix(boxes, boxes)
            np.fill_diagonal(overlaps, 0.0)
            assert overlaps.max() <= CFG.fuse.thresh_nms + 1e-9
