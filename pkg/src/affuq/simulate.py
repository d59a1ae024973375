"""Synthetic multi-pass detection data with controllable uncertainty.

The simulator builds small scenes of rectangles and ellipses, then emits M
noisy "forward passes" over each scene. Four regimes control how noise is
shared between passes, mimicking common approximate-Bayesian setups:

``mc-dropout``
    Every noise draw is ``sqrt(rho) * shared + sqrt(1-rho) * fresh`` where
    the shared part is fixed per (frame, instance) and rho is
    ``correlation`` — passes look alike for rho near 1.
``deep-ensembles``
    Independent noise per pass; the correlation knob is ignored.
``snapshot-ensembles``
    ``sqrt(rho) * bias(pass) + sqrt(1-rho) * fresh`` with a systematic bias
    drawn once per pass and reused for every frame and instance.
``mask-ensembles``
    A pool of shared noise components is gated per pass by structured
    binary masks (see ``gen_masksembles``); overlapping gates make passes
    correlated. The gate overlap is driven by the correlation knob.

All randomness is keyed by (seed, purpose, frame, instance, pass), so any
frame can be regenerated in isolation and results never depend on the order
in which frames are simulated.

Bernoulli decisions (pixel flips, missed detections) are derived from the
same Gaussian draws through their CDF, so at correlation 1 the passes are
bit-identical, not merely statistically alike.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import ndtr

from .exceptions import InfeasibleConfigError
from .masks import resample_grid
from .types import BBox, Detection, Frame, GroundTruthInstance, ProbMask

__all__ = [
    "NoiseConfig",
    "SimConfig",
    "SamplingMask",
    "gen_dropout_masks",
    "gen_masksembles",
    "make_scene",
    "simulate_passes",
    "make_frames",
]

REGIMES = ("mc-dropout", "mask-ensembles", "deep-ensembles", "snapshot-ensembles")

# Logit given to the true class before noise; softmax of it keeps the argmax
# at the true class with a comfortable margin at moderate logit_sigma.
CORRECT_CLASS_LOGIT = 4.0

# Blur applied to mask crops whenever mask noise is on (see NoiseConfig).
MASK_BLUR_SIGMA = 1.0

# Stream tags so that every purpose gets its own PRNG key.
_T_SCENE, _T_SHARED, _T_FRESH, _T_BIAS, _T_BASIS, _T_GATES = range(6)
# Noise component tags.
_C_BBOX, _C_LOGIT, _C_FLIP, _C_MISS = range(4)


@dataclass
class NoiseConfig:
    """Per-pass noise magnitudes.

    mask_flip_rate > 0 additionally enables a fixed Gaussian blur of the
    mask crop (sigma 1 px), so mask noise always produces soft boundary
    probabilities; at rate 0 masks stay bit-exact binary.
    """

    bbox_sigma: float = 1.0  # std of the box jitter, pixels
    logit_sigma: float = 0.5  # std of the class-logit noise
    mask_flip_rate: float = 0.02  # per-pixel flip probability
    miss_rate: float = 0.05  # probability a pass misses an instance

    def __post_init__(self):
        if self.bbox_sigma < 0 or self.logit_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.mask_flip_rate <= 1.0:
            raise ValueError(f"mask_flip_rate must lie in [0, 1], got {self.mask_flip_rate}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must lie in [0, 1], got {self.miss_rate}")


@dataclass
class SimConfig:
    """Scene and sampling configuration."""

    seed: int = 42
    image_extent: tuple[int, int] = (64, 64)  # (rows, cols)
    n_frames: int = 10
    instances_per_frame: tuple[int, int] = (1, 3)  # inclusive range
    n_classes: int = 5
    n_passes: int = 8  # stochastic forward passes per frame
    regime: str = "mc-dropout"
    correlation: float = 0.5  # noise sharing across passes, 0..1
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    include_background: bool = False  # append a background slot to class probs
    mask_resolution: int | None = None  # None = native crop resolution

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        rows, cols = self.image_extent
        if rows < 16 or cols < 16:
            raise ValueError(f"image extent must be at least 16x16, got {self.image_extent}")
        self.image_extent = (int(rows), int(cols))
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        lo, hi = self.instances_per_frame
        if lo < 0 or hi < lo:
            raise ValueError(f"instances_per_frame must be 0 <= lo <= hi, got {self.instances_per_frame}")
        self.instances_per_frame = (int(lo), int(hi))
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_passes < 1:
            raise ValueError(f"n_passes must be >= 1, got {self.n_passes}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}, expected one of {REGIMES}")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError(f"correlation must lie in [0, 1], got {self.correlation}")
        if self.mask_resolution is not None and self.mask_resolution < 2:
            raise ValueError(f"mask_resolution must be >= 2 or None, got {self.mask_resolution}")

    @property
    def n_prob_slots(self) -> int:
        return self.n_classes + (1 if self.include_background else 0)

    def class_names(self) -> list[str]:
        return [f"class_{i}" for i in range(self.n_classes)]


@dataclass
class SamplingMask:
    """Binary gate over abstract units (weights, noise components, ...)."""

    bits: np.ndarray  # (L,) bool

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 1:
            raise ValueError(f"mask bits must be 1-D, got shape {self.bits.shape}")

    @property
    def active_count(self) -> int:
        return int(self.bits.sum())


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _frame_key(frame_id: str) -> int:
    return zlib.crc32(frame_id.encode("utf-8"))


def gen_dropout_masks(n_units: int, dropout_rate: float, n_masks: int, seed: int) -> list[SamplingMask]:
    """Independent Bernoulli keep-masks: each unit kept with prob 1 - rate."""
    if n_units < 1:
        raise ValueError(f"n_units must be >= 1, got {n_units}")
    if n_masks < 1:
        raise ValueError(f"n_masks must be >= 1, got {n_masks}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    rng = _rng(seed)
    bits = rng.random((n_masks, n_units)) >= dropout_rate
    return [SamplingMask(row) for row in bits]


def gen_masksembles(n_units: int, n_masks: int, scale: float, seed: int) -> list[SamplingMask]:
    """Structured masks with equal cardinality and equal pairwise overlap.

    Every mask activates ``A = floor(L * s / (s + M - 1))`` units: a block of
    ``h`` units shared by all masks plus ``A - h`` private units disjoint
    from every other mask, with ``h`` the smallest overlap that fits L
    units. Consequences: all pairwise overlaps are exactly equal; ``s = 1``
    with ``L = M * c`` gives a disjoint partition; growing ``s`` grows the
    overlap. Unit order is shuffled by ``seed``. Raises
    InfeasibleConfigError when no unit per mask fits.
    """
    if n_units < 1:
        raise ValueError(f"n_units must be >= 1, got {n_units}")
    if n_masks < 1:
        raise ValueError(f"n_masks must be >= 1, got {n_masks}")
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    active = int(n_units * scale / (scale + n_masks - 1))
    if active < 1:
        raise InfeasibleConfigError(
            f"cannot fit {n_masks} masks into {n_units} units at scale {scale}: "
            "no active units per mask"
        )
    if n_masks == 1:
        overlap = 0
    else:
        overlap = max(0, -((n_units - n_masks * active) // (n_masks - 1)))  # ceil((M*A-L)/(M-1))
    private = active - overlap
    units = _rng(seed, _T_GATES).permutation(n_units)
    shared = units[:overlap]
    masks = []
    for i in range(n_masks):
        start = overlap + i * private
        own = units[start : start + private]
        bits = np.zeros(n_units, dtype=bool)
        bits[shared] = True
        bits[own] = True
        masks.append(SamplingMask(bits))
    return masks


def _draw_instance_mask(rng: np.random.Generator, extent: tuple[int, int]) -> np.ndarray:
    rows, cols = extent
    shape_kind = rng.integers(2)  # 0 = rectangle, 1 = ellipse
    scale = min(rows, cols)
    ry = int(rng.integers(max(3, scale // 10), max(4, scale // 4)))
    rx = int(rng.integers(max(3, scale // 10), max(4, scale // 4)))
    cy = int(rng.integers(ry, rows - ry))
    cx = int(rng.integers(rx, cols - rx))
    rr, cc = np.ogrid[:rows, :cols]
    if shape_kind == 0:
        mask = (np.abs(rr - cy) <= ry) & (np.abs(cc - cx) <= rx)
    else:
        mask = ((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2 <= 1.0
    return mask


def _mask_bbox(mask: np.ndarray) -> BBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(
        x=float(cols[0]),
        y=float(rows[0]),
        w=float(cols[-1] - cols[0] + 1),
        h=float(rows[-1] - rows[0] + 1),
    )


def make_scene(config: SimConfig, frame_index: int = 0) -> Frame:
    """Generate one frame's ground truth (no passes yet).

    Instances are rectangles or ellipses at random positions and sizes.
    Different classes may overlap freely; a candidate overlapping an
    existing instance of the same class with IoU > 0.35 is redrawn, so that
    distinct same-class instances stay separable.
    """
    frame_id = f"frame_{frame_index:04d}"
    rng = _rng(config.seed, _T_SCENE, frame_index)
    lo, hi = config.instances_per_frame
    n_instances = int(rng.integers(lo, hi + 1))
    gts: list[GroundTruthInstance] = []
    for _ in range(n_instances):
        for _attempt in range(50):
            mask = _draw_instance_mask(rng, config.image_extent)
            class_id = int(rng.integers(config.n_classes))
            clash = False
            for other in gts:
                if other.class_id != class_id:
                    continue
                inter = np.logical_and(mask, other.mask).sum()
                union = np.logical_or(mask, other.mask).sum()
                if union and inter / union > 0.35:
                    clash = True
                    break
            if not clash:
                gts.append(
                    GroundTruthInstance(
                        bbox=_mask_bbox(mask), class_id=class_id, mask=mask, frame_id=frame_id
                    )
                )
                break
    return Frame(
        frame_id=frame_id,
        image_extent=config.image_extent,
        passes=[],
        ground_truth=gts,
    )


def _gate_scale(correlation: float) -> float:
    return 1.0 / (1.0 - correlation)


class _NoiseBank:
    """Per-(frame, instance) noise draws for all passes, combined per regime.

    Produces, for a requested component and shape, an (M, *shape) stack of
    standard-normal variables whose cross-pass correlation follows the
    configured regime at unit marginal variance.
    """

    def __init__(self, config: SimConfig, frame_key: int, instance: int):
        self.cfg = config
        self.fkey = frame_key
        self.inst = instance
        rho = config.correlation if config.regime != "deep-ensembles" else 0.0
        self.rho = float(rho)
        if config.regime == "mask-ensembles":
            self.n_basis = max(16, 4 * config.n_passes)
            if rho >= 1.0 - 1e-12:
                gate_bits = np.ones((config.n_passes, self.n_basis), dtype=bool)
            else:
                gates = gen_masksembles(
                    self.n_basis, config.n_passes, _gate_scale(rho), config.seed
                )
                gate_bits = np.stack([g.bits for g in gates])
            self.gates = gate_bits

    def draw(self, component: int, shape: tuple[int, ...]) -> np.ndarray:
        cfg, m = self.cfg, self.cfg.n_passes
        fresh = _rng(cfg.seed, _T_FRESH, self.fkey, self.inst, component).standard_normal((m, *shape))
        if cfg.regime == "deep-ensembles" or self.rho == 0.0:
            return fresh
        if cfg.regime == "mc-dropout":
            shared = _rng(cfg.seed, _T_SHARED, self.fkey, self.inst, component).standard_normal(shape)
            return np.sqrt(self.rho) * shared + np.sqrt(1.0 - self.rho) * fresh
        if cfg.regime == "snapshot-ensembles":
            # One systematic offset per pass, shared by all frames/instances.
            if component == _C_FLIP:
                bias = _rng(cfg.seed, _T_BIAS, component).standard_normal((m,))
                bias = bias.reshape((m,) + (1,) * len(shape))
            else:
                bias = _rng(cfg.seed, _T_BIAS, component).standard_normal((m, *shape))
            return np.sqrt(self.rho) * bias + np.sqrt(1.0 - self.rho) * fresh
        # mask-ensembles: mix gated shared basis components at unit variance.
        basis = _rng(cfg.seed, _T_BASIS, self.fkey, self.inst, component).standard_normal(
            (self.n_basis, *shape)
        )
        active = self.gates.sum(axis=1, keepdims=True).astype(np.float64)  # (m, 1)
        flat = basis.reshape(self.n_basis, -1)
        mixed = (self.gates.astype(np.float64) @ flat) / np.sqrt(active)
        return mixed.reshape((m, *shape))


def _class_probs(gt_class: int, noise: np.ndarray, config: SimConfig) -> np.ndarray:
    slots = config.n_prob_slots
    if config.noise.logit_sigma == 0.0:
        # Noiseless limit: reproduce the annotation exactly.
        probs = np.zeros(slots)
        probs[gt_class] = 1.0
        return probs
    logits = np.zeros(slots)
    logits[gt_class] = CORRECT_CLASS_LOGIT
    logits = logits + noise * config.noise.logit_sigma
    logits -= logits.max()
    expl = np.exp(logits)
    return expl / expl.sum()


def _jittered_bbox(gt_bbox: BBox, noise: np.ndarray, config: SimConfig) -> BBox:
    rows, cols = config.image_extent
    x, y, w, h = gt_bbox.as_tuple()
    dx, dy, dw, dh = noise * config.noise.bbox_sigma
    x = float(np.clip(x + dx, 0.0, cols - 1.0))
    y = float(np.clip(y + dy, 0.0, rows - 1.0))
    w = float(np.clip(w + dw, 1.0, cols - x))
    h = float(np.clip(h + dh, 1.0, rows - y))
    return BBox(x, y, w, h)


def _detection_mask(
    gt: GroundTruthInstance,
    bbox: BBox,
    flip_field: np.ndarray,
    config: SimConfig,
) -> ProbMask:
    rows, cols = config.image_extent
    r0, c0, r1, c1 = bbox.pixel_bounds()
    r0, c0 = max(r0, 0), max(c0, 0)
    r1, c1 = min(r1, rows), min(c1, cols)
    crop = gt.mask[r0:r1, c0:c1].astype(np.float64)
    rate = config.noise.mask_flip_rate
    if rate > 0.0:
        flips = ndtr(flip_field[r0:r1, c0:c1]) < rate
        crop[flips] = 1.0 - crop[flips]
        crop = gaussian_filter(crop, sigma=MASK_BLUR_SIGMA, mode="constant", cval=0.0)
        crop = np.clip(crop, 0.0, 1.0)
    if config.mask_resolution is not None:
        grid = resample_grid(crop, (config.mask_resolution, config.mask_resolution), "bilinear")
        grid = np.clip(grid, 0.0, 1.0)
        return ProbMask(origin=(r0, c0), grid=grid, footprint=crop.shape)
    return ProbMask(origin=(r0, c0), grid=crop)


def simulate_passes(frame: Frame, config: SimConfig) -> list[list[Detection]]:
    """Emit M noisy detection lists over the frame's ground truth.

    Noise draws are keyed by the frame id, so regenerating a single frame
    gives the same passes as generating the whole dataset. With every noise
    magnitude at 0 and miss_rate 0, each pass reproduces the ground truth
    exactly (binary mask, one-hot class vector, exact box).
    """
    fkey = _frame_key(frame.frame_id)
    m = config.n_passes
    passes: list[list[Detection]] = [[] for _ in range(m)]
    for inst_index, gt in enumerate(frame.ground_truth):
        bank = _NoiseBank(config, fkey, inst_index)
        g_miss = bank.draw(_C_MISS, ())  # (m,)
        g_bbox = bank.draw(_C_BBOX, (4,))  # (m, 4)
        g_logit = bank.draw(_C_LOGIT, (config.n_prob_slots,))  # (m, slots)
        if config.noise.mask_flip_rate > 0.0:
            g_flip = bank.draw(_C_FLIP, config.image_extent)  # (m, rows, cols)
        else:
            g_flip = np.zeros((m, 1, 1))
        for pass_index in range(m):
            if config.noise.miss_rate > 0.0 and ndtr(g_miss[pass_index]) < config.noise.miss_rate:
                continue
            bbox = _jittered_bbox(gt.bbox, g_bbox[pass_index], config)
            probs = _class_probs(gt.class_id, g_logit[pass_index], config)
            flip_field = (
                g_flip[pass_index]
                if config.noise.mask_flip_rate > 0.0
                else np.zeros(config.image_extent)
            )
            mask = _detection_mask(gt, bbox, flip_field, config)
            passes[pass_index].append(
                Detection(bbox=bbox, class_probs=probs, mask=mask, sample_index=pass_index)
            )
    return passes


def make_frames(config: SimConfig) -> list[Frame]:
    """Generate the configured number of frames, ground truth plus passes."""
    frames = []
    for f in range(config.n_frames):
        scene = make_scene(config, f)
        frames.append(
            Frame(
                frame_id=scene.frame_id,
                image_extent=scene.image_extent,
                passes=simulate_passes(scene, config),
                ground_truth=scene.ground_truth,
            )
        )
    return frames
