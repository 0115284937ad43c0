# -*- coding: utf-8 -*-

from itertools import permutations

import numpy as np
import pytest

from evaluation.metrics import (aggregate, box_visibility, breakdown, clear_mot, evaluate, format_breakdown,
                                format_report_table, hungarian, identity_metrics, REPORT_COLUMNS)
from tracker.core import BBox, TrajectorySet
from utils.errors import FrameRangeMismatch


def track_set(*tracks):
    """tracks: (id, {frame: box_tuple})"""
    result = TrajectorySet()
    for track_id, entries in tracks:
        for frame in sorted(entries):
            result.add_entry(track_id, frame, BBox(*entries[frame]))
    return result


def still(box, frames):
    return {f: box for f in frames}


def brute_force_cost(cost):
    rows, cols = cost.shape
    if rows <= cols:
        perms = np.array(list(permutations(range(cols), rows)))
        return cost[np.arange(rows), perms].sum(axis=1).min()
    perms = np.array(list(permutations(range(rows), cols)))
    return cost[perms, np.arange(cols)].sum(axis=1).min()


@pytest.mark.parametrize("cost, pairs, total", [
    ([[1, 2], [2, 1]], [(0, 0), (1, 1)], 2.0),
    ([[0, 9], [9, 0]], [(0, 0), (1, 1)], 0.0),
    ([[4]], [(0, 0)], 4.0),
])
def test_hungarian_small_matrices(cost, pairs, total):
    assert hungarian(cost) == (pairs, total)


def test_hungarian_empty():
    assert hungarian(np.zeros((0, 3))) == ([], 0.0)


def test_hungarian_matches_permutations():
    rng = np.random.default_rng(99)
    for _ in range(500):
        rows, cols = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        cost = rng.uniform(-10, 10, (rows, cols))
        pairs, total = hungarian(cost)
        assert len(pairs) == min(rows, cols)
        assert len({r for r, _ in pairs}) == len({c for _, c in pairs}) == len(pairs)
        assert total == pytest.approx(brute_force_cost(cost), abs=1e-9)


def test_clear_mot_perfect():
    gt = track_set((1, still((0, 0, 10, 10), range(5))), (2, still((50, 50, 10, 10), range(5))))
    counts = clear_mot(gt, gt)
    assert counts.mota == 1.0
    assert counts.motp == pytest.approx(1.0)
    assert (counts.fp, counts.fn, counts.idsw, counts.frag) == (0, 0, 0, 0)
    assert counts.mostly_tracked == 2


def test_clear_mot_one_miss_one_spurious():
    gt = track_set((1, still((0, 0, 10, 10), range(5))), (2, still((50, 50, 10, 10), range(5))))
    pred = track_set((1, still((0, 0, 10, 10), range(5))),
                     (2, still((50, 50, 10, 10), range(4))),
                     (3, still((100, 0, 10, 10), [2])))
    counts = clear_mot(gt, pred)
    assert counts.gt_boxes == 10
    assert (counts.fp, counts.fn, counts.idsw) == (1, 1, 0)
    assert counts.mota == pytest.approx(0.8)


def test_clear_mot_identity_switch():
    box = (0, 0, 10, 10)
    gt = track_set((1, still(box, range(6))))
    pred = track_set((10, still(box, range(3))), (20, still(box, range(3, 6))))
    counts = clear_mot(gt, pred)
    assert counts.idsw == 1
    assert counts.frag <= 1
    assert counts.mota == pytest.approx(1.0 - 1.0 / 6.0)


def test_clear_mot_keeps_previous_correspondence():
    # 新预测框与真值 IoU 更高，但上一帧的对应关系仍然有效
    gt = track_set((1, still((0, 0, 10, 10), range(3))))
    pred = track_set((1, {0: (0, 0, 10, 10), 1: (1, 0, 10, 10), 2: (1, 0, 10, 10)}),
                     (2, {1: (0, 0, 10, 10), 2: (0, 0, 10, 10)}))
    counts = clear_mot(gt, pred)
    assert counts.idsw == 0
    assert counts.fp == 2


def test_clear_mot_counts_fragmentation():
    box = (0, 0, 10, 10)
    gt = track_set((1, still(box, range(7))))
    pred = track_set((1, still(box, [0, 1, 3, 4, 6])))
    counts = clear_mot(gt, pred)
    assert counts.frag == 2
    assert counts.fn == 2
    assert counts.idsw == 0


def test_clear_mot_mostly_lost():
    gt = track_set((1, still((0, 0, 10, 10), range(10))))
    pred = track_set((1, still((0, 0, 10, 10), [0, 1])))
    counts = clear_mot(gt, pred)
    assert (counts.mostly_tracked, counts.mostly_lost) == (0, 1)


def test_frame_range_checked_when_length_known():
    gt = track_set((1, still((0, 0, 10, 10), range(3))))
    with pytest.raises(FrameRangeMismatch):
        clear_mot(gt, gt, num_frames=2)
    assert clear_mot(gt, gt, num_frames=5).num_frames == 5


def test_identity_metrics_perfect():
    gt = track_set((1, still((0, 0, 10, 10), range(4))), (2, still((40, 0, 10, 10), range(4))))
    counts = identity_metrics(gt, gt)
    assert (counts.idf1, counts.idp, counts.idr) == (1.0, 1.0, 1.0)


def test_identity_metrics_split_track():
    box = (0, 0, 10, 10)
    gt = track_set((1, still(box, range(10))))
    pred = track_set((1, still(box, range(5))), (2, still(box, range(5, 10))))
    counts = identity_metrics(gt, pred)
    assert (counts.idtp, counts.idfp, counts.idfn) == (5, 5, 5)
    assert counts.idf1 == 0.5


def test_identity_metrics_empty_prediction():
    gt = track_set((1, still((0, 0, 10, 10), range(3))))
    counts = identity_metrics(gt, TrajectorySet())
    assert (counts.idf1, counts.idp, counts.idr) == (0.0, 0.0, 0.0)
    assert counts.idfn == 3


def random_scene(rng, num_tracks=4, num_frames=20):
    """随机真值与带噪声、漏检、ID 切换和虚警的预测"""
    gt, pred = {}, {}
    next_pred = 1
    for track_id in range(1, num_tracks + 1):
        x, y = rng.uniform(0, 200, 2)
        w, h = rng.uniform(10, 40, 2)
        pred_id = next_pred
        next_pred += 1
        for frame in range(num_frames):
            x, y = x + rng.uniform(-3, 3), y + rng.uniform(-3, 3)
            gt.setdefault(track_id, {})[frame] = (x, y, w, h)
            if rng.uniform() < 0.1:
                continue
            if rng.uniform() < 0.05:
                pred_id = next_pred
                next_pred += 1
            noisy = (x + rng.uniform(-4, 4), y + rng.uniform(-4, 4), w, h)
            pred.setdefault(pred_id, {})[frame] = noisy
    for _ in range(int(rng.integers(0, 6))):
        pred[next_pred] = {int(rng.integers(0, num_frames)): tuple(rng.uniform(0, 200, 2)) + (15.0, 15.0)}
        next_pred += 1
    return track_set(*gt.items()), pred


def test_mota_invariant_under_id_relabeling():
    rng = np.random.default_rng(5)
    for _ in range(30):
        gt, pred = random_scene(rng)
        new_ids = rng.permutation(len(pred)) * 7 + 100
        relabeled = track_set(*((int(new_id), entries) for new_id, entries in zip(new_ids, pred.values())))
        original = track_set(*pred.items())
        before, after = clear_mot(gt, original), clear_mot(gt, relabeled)
        assert (after.fp, after.fn, after.idsw) == (before.fp, before.fn, before.idsw)
        assert after.mota == pytest.approx(before.mota, abs=1e-12)
        assert identity_metrics(gt, relabeled).idf1 == pytest.approx(identity_metrics(gt, original).idf1)


def test_identity_precision_and_recall_swap_with_arguments():
    rng = np.random.default_rng(6)
    for _ in range(30):
        gt, pred_entries = random_scene(rng)
        pred = track_set(*pred_entries.items())
        forward, backward = identity_metrics(gt, pred), identity_metrics(pred, gt)
        assert forward.idp == pytest.approx(backward.idr, abs=1e-12)
        assert forward.idr == pytest.approx(backward.idp, abs=1e-12)


def test_report_table_and_aggregate():
    gt = track_set((1, still((0, 0, 10, 10), range(5))))
    first = evaluate(gt, gt, "A")
    second = evaluate(gt, TrajectorySet(), "B")
    overall = aggregate([first, second])
    assert overall.clear.gt_boxes == 10
    assert overall.mota == pytest.approx(0.5)
    assert overall.idf1 == pytest.approx(2 * 5 / (2 * 5 + 5))

    lines = format_report_table([first, second, overall]).splitlines()
    assert lines[0].split("\t") == ["name"] + list(REPORT_COLUMNS)
    assert lines[1] == "A\t1.0000\t1.0000\t1.0000\t1.0000\t1.0000\t100.0%\t0.0%\t0\t0\t0\t0"
    assert lines[3].startswith("OVERALL\t0.5000")


def test_box_visibility():
    box = BBox(0, 0, 10, 10)
    assert box_visibility(box, []) == 1.0
    assert box_visibility(box, [BBox(5, 0, 10, 10)]) == pytest.approx(0.5)
    assert box_visibility(box, [BBox(0, 0, 10, 10), BBox(0, 0, 5, 5)]) == 0.0


def test_breakdown_bins():
    gt = track_set((1, still((0, 0, 10, 60), range(4))), (2, still((100, 0, 10, 120), range(4))))
    pred = track_set((1, still((0, 0, 10, 60), range(4))))
    result = breakdown(gt, clear_mot(gt, pred))
    assert result.visibility[-1].tracked == 4
    assert result.visibility[-1].missing == 4
    assert result.height[1].tracked == 4
    assert result.height[2].missing == 4
    text = format_breakdown(result)
    assert text.startswith("kind\trange\ttracked\tmissing\tratio\n")
    assert "height\t[50, 100)\t4\t0\t1.0000" in text
