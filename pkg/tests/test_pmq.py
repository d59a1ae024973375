"""Pairwise and dataset-level mask quality.

Spatial losses are checked against per-pixel summation oracles, the matching
against an exhaustive permutation oracle, and the aggregate against a
hand-summed ratio.
"""
import itertools
import math

import numpy as np

from affuq import (
    BBox,
    GroundTruthInstance,
    Observation,
    ProbMask,
    UncertaintyMaps,
    UndefinedMetricError,
    aggregate_pmq,
    assign_hungarian,
    bg_loss,
    evaluate_frame,
    fg_loss,
    pairwise_pmq,
    q_label,
    q_spatial,
)
from affuq.pmq import DETECTION_FLOOR, FrameAssignment

LOG2 = math.log(2.0)


def _fg_oracle(gt, heat, eps=1e-7):
    total, count = 0.0, 0
    for r in range(gt.shape[0]):
        for c in range(gt.shape[1]):
            if gt[r, c]:
                p = min(max(heat[r, c], eps), 1.0 - eps)
                total += -math.log(p)
                count += 1
    return total / count


def _bg_oracle(gt, heat, eps=1e-7, floor=DETECTION_FLOOR):
    total = 0.0
    for r in range(gt.shape[0]):
        for c in range(gt.shape[1]):
            if not gt[r, c] and heat[r, c] > floor:
                p = min(max(heat[r, c], eps), 1.0 - eps)
                total += -math.log(1.0 - p)
    return total / gt.sum()


def _hungarian_oracle(mat):
    """Best total over all one-to-one assignments, by enumeration."""
    n_gt, n_obs = mat.shape
    k = min(n_gt, n_obs)
    best = 0.0
    for rows in itertools.combinations(range(n_gt), k):
        for cols in itertools.permutations(range(n_obs), k):
            best = max(best, sum(mat[i, j] for i, j in zip(rows, cols)))
    return best


def test_q_label():
    assert q_label(0, [1.0, 0.0, 0.0]) == 1.0
    assert abs(q_label(3, np.full(10, 0.1)) - 0.1) < 1e-15
    assert abs(q_label(2, [0.2, 0.5, 0.3]) - 0.3) < 1e-15
    try:
        q_label(3, [0.2, 0.5, 0.3])
        assert False, "out-of-range class must fail"
    except ValueError:
        pass


def test_fg_loss_fixtures():
    gt = np.zeros((6, 6), dtype=bool)
    gt[1:5, 1:5] = True

    perfect = gt.astype(float)
    assert abs(fg_loss(gt, perfect) - (-math.log(1.0 - 1e-7))) < 1e-12
    assert fg_loss(gt, perfect) < 1e-6

    half = np.where(gt, 0.5, 0.0)
    assert abs(fg_loss(gt, half) - LOG2) < 1e-12

    # half the GT pixels at 0.5, the rest at 1 - eps -> (log 2) / 2
    mixed = np.where(gt, 1.0, 0.0)
    fg_idx = np.argwhere(gt)
    for r, c in fg_idx[: len(fg_idx) // 2]:
        mixed[r, c] = 0.5
    assert abs(fg_loss(gt, mixed) - LOG2 / 2) < 1e-6
    assert abs(fg_loss(gt, mixed) - _fg_oracle(gt, mixed)) < 1e-12


def test_fg_loss_random_against_oracle():
    rng = np.random.default_rng(21)
    for _ in range(20):
        gt = rng.random((7, 7)) < 0.5
        if not gt.any():
            gt[3, 3] = True
        heat = rng.random((7, 7))
        assert abs(fg_loss(gt, heat) - _fg_oracle(gt, heat)) < 1e-9


def test_bg_loss_fixtures():
    gt = np.zeros((6, 6), dtype=bool)
    gt[1:5, 1:3] = True  # 8 foreground pixels

    inside_only = np.where(gt, 0.9, 0.0)
    assert bg_loss(gt, inside_only) == 0.0

    # 4 spurious pixels at prob 0.5, |GT| = 8 -> 4 log2 / 8
    spill = np.where(gt, 0.9, 0.0)
    spill[1:5, 4] = 0.5
    assert abs(bg_loss(gt, spill) - 4 * LOG2 / 8) < 1e-12
    assert abs(4 * LOG2 / 8 - 0.34657359027997264) < 1e-15

    # pixels at or below the detection floor are not "detected"
    faint = np.where(gt, 0.9, 0.0)
    faint[0, :] = DETECTION_FLOOR
    assert bg_loss(gt, faint) == 0.0


def test_bg_loss_random_against_oracle():
    rng = np.random.default_rng(22)
    for _ in range(20):
        gt = rng.random((7, 7)) < 0.4
        if not gt.any():
            gt[2, 2] = True
        heat = rng.random((7, 7))
        assert abs(bg_loss(gt, heat) - _bg_oracle(gt, heat)) < 1e-9


def test_spatial_loss_errors():
    empty = np.zeros((4, 4), dtype=bool)
    heat = np.zeros((4, 4))
    for fn in (fg_loss, bg_loss):
        try:
            fn(empty, heat)
            assert False, "empty ground truth must fail"
        except ValueError:
            pass
        try:
            fn(np.ones((4, 4), dtype=bool), np.zeros((3, 3)))
            assert False, "shape mismatch must fail"
        except ValueError:
            pass


def _obs(probs, grid, origin=(0, 0), k=1):
    grid = np.asarray(grid, dtype=np.float64)
    zero = np.zeros_like(grid)
    return Observation(
        bbox_mean=BBox(float(origin[1]), float(origin[0]), float(grid.shape[1]), float(grid.shape[0])),
        class_probs_mean=probs,
        mask_mean=ProbMask(origin=origin, grid=grid),
        k=k,
        uncertainty=UncertaintyMaps(zero, zero, 0.0, 0.0),
    )


def _gt(class_id, mask, frame_id="f0"):
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    bbox = BBox(float(cols[0]), float(rows[0]), float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))
    return GroundTruthInstance(bbox=bbox, class_id=class_id, mask=mask, frame_id=frame_id)


def test_q_spatial_fixtures():
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:6, 2:6] = True
    gt = _gt(0, mask)

    perfect = _obs([1.0, 0.0], mask[2:6, 2:6].astype(float), origin=(2, 2))
    assert q_spatial(gt, perfect) >= 1.0 - 1e-5

    uniform = _obs([1.0, 0.0], np.full((4, 4), 0.5), origin=(2, 2))
    assert abs(q_spatial(gt, uniform) - 0.5) < 1e-9  # exp(-log 2)

    # both losses active: exp(-(L_FG + L_BG)) recomposed from the oracles
    spilled_grid = np.full((5, 5), 0.7)
    spilled = _obs([1.0, 0.0], spilled_grid, origin=(2, 2))
    heat = np.zeros((8, 8))
    heat[2:7, 2:7] = 0.7
    expected = math.exp(-(_fg_oracle(mask, heat) + _bg_oracle(mask, heat)))
    assert abs(q_spatial(gt, spilled) - expected) < 1e-9


def test_pairwise_matrix_recomposition():
    rng = np.random.default_rng(23)
    extent = (10, 10)
    gts, observations = [], []
    for i in range(3):
        mask = np.zeros(extent, dtype=bool)
        r, c = 1 + 3 * (i % 2), 1 + 3 * (i // 2)
        mask[r : r + 3, c : c + 3] = True
        gts.append(_gt(i % 2, mask))
    for j in range(3):
        grid = np.clip(rng.random((3, 3)) * 0.5 + 0.4, 0.0, 1.0)
        origin = (1 + 3 * (j % 2), 1 + 3 * (j // 2))
        raw = rng.random(2) + 0.2
        observations.append(_obs(raw / raw.sum(), grid, origin=origin))

    mat = pairwise_pmq(gts, observations)
    assert mat.shape == (3, 3)
    for i, gt in enumerate(gts):
        for j, obs in enumerate(observations):
            ql = q_label(gt.class_id, obs.class_probs_mean)
            qs = q_spatial(gt, obs)
            assert abs(mat[i, j] - math.sqrt(ql * qs)) < 1e-12
    assert mat.min() >= 0.0 and mat.max() <= 1.0

    assert pairwise_pmq([], observations).shape == (0, 3)
    assert pairwise_pmq(gts, []).shape == (3, 0)


def test_pairwise_zero_label_annihilates():
    mask = np.zeros((6, 6), dtype=bool)
    mask[1:4, 1:4] = True
    gt = _gt(1, mask)
    obs = _obs([1.0, 0.0], mask[1:4, 1:4].astype(float), origin=(1, 1))
    mat = pairwise_pmq([gt], [obs])
    assert mat[0, 0] == 0.0


def test_hungarian_fixtures():
    out = assign_hungarian(np.array([[0.7]]))
    assert out.matches == [(0, 0, 0.7)]
    assert (out.n_tp, out.n_fp, out.n_fn) == (1, 0, 0)

    out = assign_hungarian(np.array([[0.9, 0.1], [0.2, 0.8]]))
    assert sorted(m[:2] for m in out.matches) == [(0, 0), (1, 1)]
    assert abs(out.q.sum() - 1.7) < 1e-12

    # greedy would take 0.9 then 0.05; the optimum is 0.85 + 0.8
    out = assign_hungarian(np.array([[0.9, 0.85], [0.8, 0.05]]))
    assert abs(out.q.sum() - 1.65) < 1e-12

    # matches at the floor are dropped: FN + FP instead of a zero TP
    out = assign_hungarian(np.array([[0.6, 0.0], [0.0, 0.0]]))
    assert (out.n_tp, out.n_fp, out.n_fn) == (1, 1, 1)

    out = assign_hungarian(np.zeros((2, 0)))
    assert (out.n_tp, out.n_fp, out.n_fn) == (0, 0, 2)
    out = assign_hungarian(np.zeros((0, 3)))
    assert (out.n_tp, out.n_fp, out.n_fn) == (0, 3, 0)


def test_hungarian_matches_permutation_oracle():
    rng = np.random.default_rng(24)
    for _ in range(40):
        n_gt = int(rng.integers(1, 6))
        n_obs = int(rng.integers(1, 6))
        mat = rng.random((n_gt, n_obs))
        out = assign_hungarian(mat, validity_floor=0.0)
        assert abs(out.q.sum() - _hungarian_oracle(mat)) < 1e-9
        # one-to-one: no index reused
        gt_idx = [m[0] for m in out.matches]
        obs_idx = [m[1] for m in out.matches]
        assert len(set(gt_idx)) == len(gt_idx)
        assert len(set(obs_idx)) == len(obs_idx)


def test_aggregate_fixtures():
    tp = FrameAssignment(matches=[(0, 0, 0.8)], n_tp=1, n_fp=0, n_fn=0, q=np.array([0.8]))
    result = aggregate_pmq([tp])
    assert abs(result.pmq - 0.8) < 1e-15
    assert abs(result.mean_ppmq_over_tp - 0.8) < 1e-15

    with_fn = FrameAssignment(matches=[(0, 0, 0.8)], n_tp=1, n_fp=0, n_fn=1, q=np.array([0.8]))
    result = aggregate_pmq([with_fn])
    assert result.pmq == 0.4  # 0.8 / (1 TP + 1 FN), exact in binary arithmetic
    assert abs(result.mean_ppmq_over_tp - 0.8) < 1e-15


def test_aggregate_multi_frame_hand_sum():
    frames = [
        FrameAssignment(matches=[(0, 0, 0.9), (1, 1, 0.6)], n_tp=2, n_fp=1, n_fn=0, q=np.array([0.9, 0.6])),
        FrameAssignment(matches=[(0, 1, 0.5)], n_tp=1, n_fp=0, n_fn=2, q=np.array([0.5])),
        FrameAssignment(matches=[], n_tp=0, n_fp=2, n_fn=1, q=np.array([])),
    ]
    result = aggregate_pmq(frames)
    # numerator 0.9+0.6+0.5 = 2.0; denominator (2+1+0)+(1+0+2)+(0+2+1) = 9
    assert abs(result.pmq - 2.0 / 9.0) < 1e-12
    assert abs(result.mean_ppmq_over_tp - 2.0 / 3.0) < 1e-12
    assert (result.n_tp, result.n_fp, result.n_fn) == (3, 3, 3)
    assert result.pmq <= result.mean_ppmq_over_tp <= 1.0

    try:
        aggregate_pmq([FrameAssignment(matches=[], n_tp=0, n_fp=0, n_fn=0, q=np.array([]))])
        assert False, "zero denominator must fail"
    except UndefinedMetricError:
        pass


def test_false_positive_strictly_decreases_pmq():
    rng = np.random.default_rng(25)
    for _ in range(10):
        n_tp = int(rng.integers(1, 5))
        q = rng.random(n_tp) * 0.9 + 0.05
        base = FrameAssignment(
            matches=[(i, i, float(q[i])) for i in range(n_tp)],
            n_tp=n_tp, n_fp=0, n_fn=0, q=q,
        )
        bumped = FrameAssignment(
            matches=base.matches, n_tp=n_tp, n_fp=1, n_fn=0, q=q,
        )
        assert aggregate_pmq([bumped]).pmq < aggregate_pmq([base]).pmq


def test_ppmq_monotone_in_gt_class_probability():
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:6, 2:6] = True
    gt = _gt(0, mask)
    grid = mask[2:6, 2:6].astype(float) * 0.8
    prev = -1.0
    for p0 in (0.2, 0.4, 0.6, 0.8, 1.0):
        obs = _obs([p0, 1.0 - p0], grid, origin=(2, 2))
        score = pairwise_pmq([gt], [obs])[0, 0]
        assert score > prev
        prev = score


def test_q_spatial_translation_invariance():
    base = np.zeros((12, 12), dtype=bool)
    base[2:6, 2:6] = True
    grid = np.full((4, 4), 0.75)
    for dr, dc in ((0, 0), (3, 1), (5, 5)):
        shifted = np.zeros((12, 12), dtype=bool)
        shifted[2 + dr : 6 + dr, 2 + dc : 6 + dc] = True
        gt = _gt(0, shifted)
        obs = _obs([1.0, 0.0], grid, origin=(2 + dr, 2 + dc))
        if (dr, dc) == (0, 0):
            reference = q_spatial(gt, obs)
        else:
            assert abs(q_spatial(gt, obs) - reference) < 1e-12


def test_evaluate_frame_detail_rows():
    mask_a = np.zeros((10, 10), dtype=bool)
    mask_a[1:5, 1:5] = True
    mask_b = np.zeros((10, 10), dtype=bool)
    mask_b[6:9, 6:9] = True
    gts = [_gt(0, mask_a), _gt(1, mask_b)]
    observations = [
        _obs([0.9, 0.1], mask_a[1:5, 1:5].astype(float) * 0.9, origin=(1, 1)),
        _obs([0.2, 0.8], mask_b[6:9, 6:9].astype(float) * 0.9, origin=(6, 6)),
        _obs([0.6, 0.4], np.full((2, 2), 0.9), origin=(0, 7)),  # spurious
    ]
    out = evaluate_frame(gts, observations)
    assert out.n_tp == 2 and out.n_fp == 1 and out.n_fn == 0
    assert out.gt_classes == [0, 1]
    assert out.obs_classes == [0, 1, 0]
    for pair in out.pairs:
        assert abs(pair.ppmq - math.sqrt(pair.q_label * pair.q_spatial)) < 1e-12

    result = aggregate_pmq([out])
    # FP attribution goes to the observation's own argmax class (class 0)
    assert result.per_class[0].n_fp == 1
    assert result.per_class[0].n_tp == 1
    assert result.per_class[1].n_tp == 1
    assert result.per_class[1].n_fp == 0
