"""Synthetic scene/pass generator: mask builders, regimes, determinism."""
import numpy as np

from affuq import (
    Frame,
    InfeasibleConfigError,
    SimConfig,
    cluster_frame,
    evaluate_frame,
    fuse_cluster,
    gen_dropout_masks,
    gen_masksembles,
    make_frames,
    make_scene,
    simulate_passes,
)
from affuq.simulate import NoiseConfig


def test_dropout_masks_deterministic():
    a = gen_dropout_masks(64, 0.3, 10, seed=7)
    b = gen_dropout_masks(64, 0.3, 10, seed=7)
    assert all(np.array_equal(x.bits, y.bits) for x, y in zip(a, b))
    c = gen_dropout_masks(64, 0.3, 10, seed=8)
    assert any(not np.array_equal(x.bits, y.bits) for x, y in zip(a, c))


def test_dropout_masks_keep_fraction():
    L, M, d = 128, 50, 0.3
    masks = gen_dropout_masks(L, d, M, seed=9)
    kept = sum(m.active_count for m in masks)
    n = L * M
    expected = n * (1 - d)
    sigma = np.sqrt(n * d * (1 - d))
    assert abs(kept - expected) <= 3 * sigma

    # d -> 0 limit: everything kept
    tiny = gen_dropout_masks(64, 1e-9, 20, seed=10)
    assert all(m.active_count == 64 for m in tiny)


def test_dropout_masks_pairwise_overlap():
    """Mean pairwise overlap of kept bits concentrates at (1-d)^2 L = 32.

    The dominant fluctuation is the mean cardinality over M masks; its std
    propagates to the overlap as roughly 2(1-d) * sqrt(L d (1-d) / M) which
    is about 0.2 bits here, so 0.7 is a 3-sigma band.
    """
    L, M, d = 128, 1000, 0.5
    masks = gen_dropout_masks(L, d, M, seed=11)
    bits = np.stack([m.bits for m in masks]).astype(np.float64)
    gram = bits @ bits.T
    total = gram.sum() - np.trace(gram)
    mean_overlap = total / (M * (M - 1))
    assert abs(mean_overlap - (1 - d) ** 2 * L) <= 0.7


def test_masksembles_exact_fixture():
    """(L=24, M=4, s=2): equal cardinality, all pairwise overlaps equal."""
    masks = gen_masksembles(24, 4, 2.0, seed=12)
    cards = [m.active_count for m in masks]
    assert len(set(cards)) == 1
    assert cards[0] == 9  # floor(24 * 2 / (2 + 3))
    overlaps = []
    for i in range(4):
        for j in range(i + 1, 4):
            overlaps.append(int(np.logical_and(masks[i].bits, masks[j].bits).sum()))
    assert max(overlaps) - min(overlaps) <= 1
    assert overlaps[0] == 4  # smallest overlap covering 24 units with 4x9 actives


def test_masksembles_disjoint_partition():
    # s = 1 with L divisible by M: a clean partition, overlap 0
    masks = gen_masksembles(20, 5, 1.0, seed=13)
    assert all(m.active_count == 4 for m in masks)
    stacked = np.stack([m.bits for m in masks])
    assert stacked.sum() == 20
    assert np.array_equal(stacked.any(axis=0), np.ones(20, dtype=bool))
    for i in range(5):
        for j in range(i + 1, 5):
            assert not np.logical_and(masks[i].bits, masks[j].bits).any()


def test_masksembles_degenerate_and_infeasible():
    single = gen_masksembles(16, 1, 2.0, seed=14)
    assert len(single) == 1
    assert single[0].active_count == 16  # M=1 keeps the whole layer

    try:
        gen_masksembles(3, 8, 1.0, seed=15)
        assert False, "0 active units per mask must fail"
    except InfeasibleConfigError:
        pass
    try:
        gen_masksembles(24, 4, 0.5, seed=15)
        assert False, "scale below 1 must fail"
    except ValueError:
        pass


def test_masksembles_overlap_grows_with_scale():
    def mean_overlap(scale):
        masks = gen_masksembles(64, 4, scale, seed=16)
        tot, cnt = 0, 0
        for i in range(4):
            for j in range(i + 1, 4):
                tot += int(np.logical_and(masks[i].bits, masks[j].bits).sum())
                cnt += 1
        return tot / cnt

    assert mean_overlap(1.0) <= mean_overlap(2.0) <= mean_overlap(4.0)


def test_scene_generation():
    cfg = SimConfig(seed=17, n_frames=1, instances_per_frame=(1, 1))
    frame = make_scene(cfg, 0)
    assert frame.frame_id == "frame_0000"
    assert len(frame.ground_truth) == 1
    gt = frame.ground_truth[0]
    assert gt.mask.shape == cfg.image_extent
    assert gt.mask.any()
    r0, c0, r1, c1 = gt.bbox.pixel_bounds()
    assert 0 <= r0 < r1 <= cfg.image_extent[0]
    assert 0 <= c0 < c1 <= cfg.image_extent[1]

    again = make_scene(cfg, 0)
    assert np.array_equal(frame.ground_truth[0].mask, again.ground_truth[0].mask)
    assert frame.ground_truth[0].class_id == again.ground_truth[0].class_id


def test_scene_instance_counts_stay_in_range():
    cfg = SimConfig(seed=18, instances_per_frame=(1, 3), n_frames=1)
    counts = set()
    for f in range(100):
        n = len(make_scene(cfg, f).ground_truth)
        assert 1 <= n <= 3
        counts.add(n)
    assert counts == {1, 2, 3}  # the whole range appears over 100 frames


def test_noiseless_passes_reproduce_ground_truth():
    cfg = SimConfig(
        seed=19,
        n_frames=1,
        instances_per_frame=(2, 2),
        n_passes=4,
        noise=NoiseConfig(bbox_sigma=0.0, logit_sigma=0.0, mask_flip_rate=0.0, miss_rate=0.0),
    )
    frame = make_scene(cfg, 0)
    passes = simulate_passes(frame, cfg)
    assert len(passes) == 4
    for dets in passes:
        assert len(dets) == len(frame.ground_truth)
        for det, gt in zip(dets, frame.ground_truth):
            assert det.bbox.as_tuple() == gt.bbox.as_tuple()
            assert det.confidence == 1.0
            assert det.argmax_class == gt.class_id
            r0, c0, r1, c1 = gt.bbox.pixel_bounds()
            np.testing.assert_array_equal(det.mask.grid, gt.mask[r0:r1, c0:c1].astype(float))

    # downstream: every pair scores a clamp-limited perfect quality
    full = Frame(
        frame_id=frame.frame_id,
        image_extent=frame.image_extent,
        passes=passes,
        ground_truth=frame.ground_truth,
    )
    observations = [fuse_cluster(cl, cfg.image_extent) for cl in cluster_frame(full)]
    out = evaluate_frame(frame.ground_truth, observations)
    assert out.n_tp == len(frame.ground_truth)
    assert out.n_fp == 0
    assert all(score >= 1.0 - 1e-4 for _, _, score in out.matches)


def test_miss_rate_one_empties_passes():
    cfg = SimConfig(seed=20, n_frames=2, noise=NoiseConfig(miss_rate=1.0))
    for frame in make_frames(cfg):
        assert frame.n_passes == cfg.n_passes
        assert all(dets == [] for dets in frame.passes)


def test_full_correlation_collapses_passes():
    cfg = SimConfig(
        seed=21,
        n_frames=1,
        instances_per_frame=(1, 2),
        n_passes=5,
        regime="mc-dropout",
        correlation=1.0,
        noise=NoiseConfig(miss_rate=0.0),
    )
    frame = make_frames(cfg)[0]
    first = frame.passes[0]
    for dets in frame.passes[1:]:
        assert len(dets) == len(first)
        for d, ref in zip(dets, first):
            assert d.bbox.as_tuple() == ref.bbox.as_tuple()
            np.testing.assert_array_equal(d.class_probs, ref.class_probs)
            np.testing.assert_array_equal(d.mask.grid, ref.mask.grid)

    for cluster in cluster_frame(frame):
        obs = fuse_cluster(cluster, cfg.image_extent)
        assert obs.uncertainty.semantic_epistemic <= 1e-15
        assert np.abs(obs.uncertainty.spatial_epistemic).max() <= 1e-15


def test_simulation_is_deterministic():
    cfg = SimConfig(seed=22, n_frames=3, n_passes=4)
    a = make_frames(cfg)
    b = make_frames(cfg)
    assert len(a) == len(b)
    for fa, fb in zip(a, b):
        assert fa.frame_id == fb.frame_id
        assert len(fa.ground_truth) == len(fb.ground_truth)
        for ga, gb in zip(fa.ground_truth, fb.ground_truth):
            assert np.array_equal(ga.mask, gb.mask)
        for pa, pb in zip(fa.passes, fb.passes):
            assert len(pa) == len(pb)
            for da, db in zip(pa, pb):
                assert da.bbox.as_tuple() == db.bbox.as_tuple()
                np.testing.assert_array_equal(da.class_probs, db.class_probs)
                np.testing.assert_array_equal(da.mask.grid, db.mask.grid)


def test_background_slot_and_mask_resolution_knobs():
    cfg = SimConfig(
        seed=23, n_frames=1, include_background=True, mask_resolution=14,
        noise=NoiseConfig(miss_rate=0.0),
    )
    frame = make_frames(cfg)[0]
    det = frame.passes[0][0]
    assert det.class_probs.size == cfg.n_classes + 1
    assert det.mask.grid.shape == (14, 14)
    assert det.mask.footprint is not None


def _mean_ppmq(cfg):
    scores = []
    for frame in make_frames(cfg):
        observations = [fuse_cluster(cl, cfg.image_extent) for cl in cluster_frame(frame)]
        out = evaluate_frame(frame.ground_truth, observations)
        scores.extend(score for _, _, score in out.matches)
    return float(np.mean(scores)) if scores else 0.0


def test_noise_monotonicity_paired_per_seed():
    """More mask/label noise never helps: mean pPMQ drops, paired per seed."""
    flip_wins = 0
    logit_wins = 0
    n_seeds = 20
    for seed in range(n_seeds):
        base = dict(
            seed=200 + seed, image_extent=(32, 32), n_frames=2, n_passes=4,
            instances_per_frame=(1, 2),
        )
        quiet_flip = _mean_ppmq(SimConfig(
            **base, noise=NoiseConfig(bbox_sigma=0.0, logit_sigma=0.0, mask_flip_rate=0.01, miss_rate=0.0)))
        loud_flip = _mean_ppmq(SimConfig(
            **base, noise=NoiseConfig(bbox_sigma=0.0, logit_sigma=0.0, mask_flip_rate=0.2, miss_rate=0.0)))
        flip_wins += quiet_flip >= loud_flip

        quiet_logit = _mean_ppmq(SimConfig(
            **base, noise=NoiseConfig(bbox_sigma=0.0, logit_sigma=0.1, mask_flip_rate=0.0, miss_rate=0.0)))
        loud_logit = _mean_ppmq(SimConfig(
            **base, noise=NoiseConfig(bbox_sigma=0.0, logit_sigma=2.5, mask_flip_rate=0.0, miss_rate=0.0)))
        logit_wins += quiet_logit >= loud_logit

    assert flip_wins >= 18
    assert logit_wins >= 18


def test_config_validation():
    for kwargs in (
        dict(seed=-1),
        dict(image_extent=(8, 64)),
        dict(n_frames=0),
        dict(instances_per_frame=(3, 1)),
        dict(n_classes=1),
        dict(n_passes=0),
        dict(regime="bootstrap"),
        dict(correlation=1.5),
        dict(mask_resolution=1),
    ):
        try:
            SimConfig(**kwargs)
            assert False, f"{kwargs} must fail"
        except ValueError:
            pass
    for kwargs in (
        dict(bbox_sigma=-0.1),
        dict(mask_flip_rate=1.5),
        dict(miss_rate=-0.2),
    ):
        try:
            NoiseConfig(**kwargs)
            assert False, f"{kwargs} must fail"
        except ValueError:
            pass
