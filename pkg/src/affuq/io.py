"""File formats: dataset JSON, observations JSON, metrics report, RLE masks.

Binary ground-truth masks travel as uncompressed run-length encodings in
column-major (Fortran) pixel order, counts alternating background/foreground
and always starting with the background run (possibly 0). Probability masks
travel as row-major float lists on their bbox-local grid.

All floats are rounded to 9 significant digits before writing and all keys
are emitted in sorted order, so serialisation is byte-stable: writing the
same data twice gives identical files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetFormatError
from .fusion import Observation, UncertaintyMaps
from .types import BBox, Detection, Frame, GroundTruthInstance, ProbMask

__all__ = [
    "Dataset",
    "ObservationsFrame",
    "ObservationsFile",
    "rle_encode",
    "rle_decode",
    "round_floats",
    "dataset_to_dict",
    "dataset_from_dict",
    "observations_to_dict",
    "observations_from_dict",
    "save_dataset",
    "load_dataset",
    "save_observations",
    "load_observations",
    "save_report",
    "write_curve_csv",
]

FORMAT_VERSION = "1.0"


@dataclass
class Dataset:
    """In-memory twin of a dataset file."""

    classes: list[str]
    image_extent: tuple[int, int]
    frames: list[Frame]
    background_slot: bool = False  # class vectors carry a trailing background entry
    version: str = FORMAT_VERSION

    @property
    def n_prob_slots(self) -> int:
        return len(self.classes) + (1 if self.background_slot else 0)


@dataclass
class ObservationsFrame:
    frame_id: str
    n_passes: int
    observations: list[Observation]


@dataclass
class ObservationsFile:
    """In-memory twin of a fused-observations file."""

    classes: list[str]
    image_extent: tuple[int, int]
    frames: list[ObservationsFrame]
    background_slot: bool = False
    fuse_config: dict = field(default_factory=dict)
    version: str = FORMAT_VERSION


# ---------------------------------------------------------------------------
# RLE codec


def rle_encode(mask: np.ndarray) -> dict:
    """Encode a binary mask as uncompressed column-major run lengths."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    mask = mask.astype(bool)
    h, w = mask.shape
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return {"size": [int(h), int(w)], "counts": []}
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)  # encoding always opens with a background run
    return {"size": [int(h), int(w)], "counts": counts}


def rle_decode(rle: dict, path: str = "mask_rle") -> np.ndarray:
    """Decode an RLE dict back into a (h, w) boolean mask."""
    if not isinstance(rle, dict):
        raise DatasetFormatError(f"{path}: expected an object, got {type(rle).__name__}")
    size = rle.get("size")
    counts = rle.get("counts")
    if not (isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) for v in size)):
        raise DatasetFormatError(f"{path}.size: expected [rows, cols] integers")
    h, w = size
    if h < 0 or w < 0:
        raise DatasetFormatError(f"{path}.size: extents must be non-negative, got {size}")
    if not isinstance(counts, list) or any((not isinstance(c, int)) or c < 0 for c in counts):
        raise DatasetFormatError(f"{path}.counts: expected a list of non-negative integers")
    total = sum(counts)
    if total != h * w:
        raise DatasetFormatError(f"{path}.counts: runs cover {total} pixels, mask has {h * w}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")


# ---------------------------------------------------------------------------
# JSON plumbing


def round_floats(obj):
    """Round every float in a JSON-like structure to 9 significant digits."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def _dump_json(obj, path: str | Path, indent: int | None = None) -> None:
    text = json.dumps(round_floats(obj), sort_keys=True, indent=indent,
                      separators=(",", ":") if indent is None else None)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _load_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"{path}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise DatasetFormatError(f"{path}.{key}: missing required field")
    return obj[key]


def _as_extent(value, path: str) -> tuple[int, int]:
    if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) for v in value)):
        raise DatasetFormatError(f"{path}: expected [rows, cols] integers")
    rows, cols = value
    if rows < 1 or cols < 1:
        raise DatasetFormatError(f"{path}: extents must be positive, got {value}")
    return (rows, cols)


def _as_floats(value, n: int, path: str) -> list[float]:
    if not (isinstance(value, list) and len(value) == n):
        raise DatasetFormatError(f"{path}: expected a list of {n} numbers")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise DatasetFormatError(f"{path}[{i}]: expected a number, got {type(v).__name__}")
        out.append(float(v))
    return out


def _check_version(value, path: str) -> str:
    if value != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}.version: unsupported version {value!r}, expected {FORMAT_VERSION!r}")
    return value


def _check_classes(value, path: str) -> list[str]:
    if not (isinstance(value, list) and value and all(isinstance(c, str) for c in value)):
        raise DatasetFormatError(f"{path}.classes: expected a non-empty list of names")
    return list(value)


# Boxes this close to the canvas edge are taken as touching it exactly. The
# writer rounds x/y/w/h independently to 9 significant digits, so a box whose
# far edge sits on the extent can overhang by float dust after a round trip;
# clipping that dust would change the values (and the bytes) on re-save.
_EDGE_TOL = 1e-6


def _bbox_from_file(values, extent: tuple[int, int], path: str) -> BBox:
    x, y, w, h = _as_floats(values, 4, path)
    rows, cols = extent
    try:
        bbox = BBox(x, y, w, h)
        if x < -_EDGE_TOL or y < -_EDGE_TOL or x + w > cols + _EDGE_TOL or y + h > rows + _EDGE_TOL:
            bbox = bbox.clipped(extent)  # genuinely out-of-canvas boxes are clipped
        return bbox
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


def _mask_to_dict(mask: ProbMask) -> dict:
    out = {
        "origin": [int(mask.origin[0]), int(mask.origin[1])],
        "rows": int(mask.grid.shape[0]),
        "cols": int(mask.grid.shape[1]),
        "values": [float(v) for v in mask.grid.ravel()],
    }
    if mask.footprint is not None and mask.footprint != mask.grid.shape:
        out["footprint"] = [int(mask.footprint[0]), int(mask.footprint[1])]
    return out


def _mask_from_dict(obj, path: str) -> ProbMask:
    origin = _req(obj, "origin", path)
    if not (isinstance(origin, list) and len(origin) == 2 and all(isinstance(v, int) for v in origin)):
        raise DatasetFormatError(f"{path}.origin: expected [row, col] integers")
    rows = _req(obj, "rows", path)
    cols = _req(obj, "cols", path)
    if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 0 or cols < 0:
        raise DatasetFormatError(f"{path}.rows/cols: expected non-negative integers")
    values = _as_floats(_req(obj, "values", path), rows * cols, f"{path}.values")
    footprint = None
    if "footprint" in obj:
        fp = obj["footprint"]
        if not (isinstance(fp, list) and len(fp) == 2 and all(isinstance(v, int) for v in fp)):
            raise DatasetFormatError(f"{path}.footprint: expected [rows, cols] integers")
        footprint = (fp[0], fp[1])
    try:
        return ProbMask(
            origin=(origin[0], origin[1]),
            grid=np.asarray(values, dtype=np.float64).reshape(rows, cols),
            footprint=footprint,
        )
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Dataset files


def dataset_to_dict(ds: Dataset) -> dict:
    frames_out = []
    for frame in sorted(ds.frames, key=lambda f: f.frame_id):
        gts = [
            {
                "bbox": list(gt.bbox.as_tuple()),
                "class_id": gt.class_id,
                "mask_rle": rle_encode(gt.mask),
            }
            for gt in frame.ground_truth
        ]
        passes = [
            [
                {
                    "bbox": list(det.bbox.as_tuple()),
                    "class_probs": [float(p) for p in det.class_probs],
                    "mask": _mask_to_dict(det.mask),
                }
                for det in dets
            ]
            for dets in frame.passes
        ]
        frames_out.append({"frame_id": frame.frame_id, "ground_truth": gts, "passes": passes})
    return {
        "version": ds.version,
        "classes": list(ds.classes),
        "background_slot": ds.background_slot,
        "image_extent": [ds.image_extent[0], ds.image_extent[1]],
        "frames": frames_out,
    }


def dataset_from_dict(data: dict) -> Dataset:
    path = "dataset"
    _check_version(_req(data, "version", path), path)
    classes = _check_classes(_req(data, "classes", path), path)
    background = data.get("background_slot", False)
    if not isinstance(background, bool):
        raise DatasetFormatError(f"{path}.background_slot: expected a boolean")
    extent = _as_extent(_req(data, "image_extent", path), f"{path}.image_extent")
    n_slots = len(classes) + (1 if background else 0)

    raw_frames = _req(data, "frames", path)
    if not isinstance(raw_frames, list):
        raise DatasetFormatError(f"{path}.frames: expected a list")
    frames = []
    seen_ids: set[str] = set()
    for fi, fobj in enumerate(raw_frames):
        fpath = f"{path}.frames[{fi}]"
        frame_id = _req(fobj, "frame_id", fpath)
        if not isinstance(frame_id, str) or not frame_id:
            raise DatasetFormatError(f"{fpath}.frame_id: expected a non-empty string")
        if frame_id in seen_ids:
            raise DatasetFormatError(f"{fpath}.frame_id: duplicate frame id {frame_id!r}")
        seen_ids.add(frame_id)

        gts = []
        for gi, gobj in enumerate(fobj.get("ground_truth", [])):
            gpath = f"{fpath}.ground_truth[{gi}]"
            class_id = _req(gobj, "class_id", gpath)
            if not isinstance(class_id, int) or not 0 <= class_id < len(classes):
                raise DatasetFormatError(
                    f"{gpath}.class_id: expected an integer in [0, {len(classes)}), got {class_id!r}"
                )
            mask = rle_decode(_req(gobj, "mask_rle", gpath), f"{gpath}.mask_rle")
            if mask.shape != extent:
                raise DatasetFormatError(
                    f"{gpath}.mask_rle: mask size {list(mask.shape)} does not match image extent {list(extent)}"
                )
            bbox = _bbox_from_file(_req(gobj, "bbox", gpath), extent, f"{gpath}.bbox")
            try:
                gts.append(GroundTruthInstance(bbox=bbox, class_id=class_id, mask=mask, frame_id=frame_id))
            except ValueError as exc:
                raise DatasetFormatError(f"{gpath}: {exc}") from exc

        raw_passes = _req(fobj, "passes", fpath)
        if not isinstance(raw_passes, list):
            raise DatasetFormatError(f"{fpath}.passes: expected a list of passes")
        passes = []
        for mi, dets_obj in enumerate(raw_passes):
            if not isinstance(dets_obj, list):
                raise DatasetFormatError(f"{fpath}.passes[{mi}]: expected a list of detections")
            dets = []
            for di, dobj in enumerate(dets_obj):
                dpath = f"{fpath}.passes[{mi}][{di}]"
                probs = _req(dobj, "class_probs", dpath)
                if not isinstance(probs, list) or len(probs) != n_slots:
                    raise DatasetFormatError(
                        f"{dpath}.class_probs: expected {n_slots} probabilities, got "
                        f"{len(probs) if isinstance(probs, list) else type(probs).__name__}"
                    )
                bbox = _bbox_from_file(_req(dobj, "bbox", dpath), extent, f"{dpath}.bbox")
                mask = _mask_from_dict(_req(dobj, "mask", dpath), f"{dpath}.mask")
                try:
                    dets.append(
                        Detection(
                            bbox=bbox,
                            class_probs=_as_floats(probs, n_slots, f"{dpath}.class_probs"),
                            mask=mask,
                            sample_index=mi,
                        )
                    )
                except ValueError as exc:
                    raise DatasetFormatError(f"{dpath}: {exc}") from exc
            passes.append(dets)

        try:
            frames.append(Frame(frame_id=frame_id, image_extent=extent, passes=passes, ground_truth=gts))
        except ValueError as exc:
            raise DatasetFormatError(f"{fpath}: {exc}") from exc

    return Dataset(
        classes=classes,
        image_extent=extent,
        frames=frames,
        background_slot=background,
    )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    _dump_json(dataset_to_dict(ds), path)


def load_dataset(path: str | Path) -> Dataset:
    return dataset_from_dict(_load_json(path))


# ---------------------------------------------------------------------------
# Observations files


def observations_to_dict(obs: ObservationsFile) -> dict:
    frames_out = []
    for frame in sorted(obs.frames, key=lambda f: f.frame_id):
        rows = []
        for o in frame.observations:
            rows.append(
                {
                    "bbox": list(o.bbox_mean.as_tuple()),
                    "class_probs": [float(p) for p in o.class_probs_mean],
                    "k": o.k,
                    "mask": _mask_to_dict(o.mask_mean),
                    "uncertainty": {
                        "spatial_epistemic": [float(v) for v in o.uncertainty.spatial_epistemic.ravel()],
                        "spatial_aleatoric": [float(v) for v in o.uncertainty.spatial_aleatoric.ravel()],
                        "semantic_epistemic": o.uncertainty.semantic_epistemic,
                        "semantic_aleatoric": o.uncertainty.semantic_aleatoric,
                    },
                }
            )
        frames_out.append({"frame_id": frame.frame_id, "n_passes": frame.n_passes, "observations": rows})
    return {
        "version": obs.version,
        "classes": list(obs.classes),
        "background_slot": obs.background_slot,
        "image_extent": [obs.image_extent[0], obs.image_extent[1]],
        "fuse_config": dict(obs.fuse_config),
        "frames": frames_out,
    }


def observations_from_dict(data: dict) -> ObservationsFile:
    path = "observations"
    _check_version(_req(data, "version", path), path)
    classes = _check_classes(_req(data, "classes", path), path)
    background = data.get("background_slot", False)
    if not isinstance(background, bool):
        raise DatasetFormatError(f"{path}.background_slot: expected a boolean")
    extent = _as_extent(_req(data, "image_extent", path), f"{path}.image_extent")
    fuse_config = data.get("fuse_config", {})
    if not isinstance(fuse_config, dict):
        raise DatasetFormatError(f"{path}.fuse_config: expected an object")
    n_slots = len(classes) + (1 if background else 0)

    raw_frames = _req(data, "frames", path)
    if not isinstance(raw_frames, list):
        raise DatasetFormatError(f"{path}.frames: expected a list")
    frames = []
    seen_ids: set[str] = set()
    for fi, fobj in enumerate(raw_frames):
        fpath = f"{path}.frames[{fi}]"
        frame_id = _req(fobj, "frame_id", fpath)
        if not isinstance(frame_id, str) or not frame_id:
            raise DatasetFormatError(f"{fpath}.frame_id: expected a non-empty string")
        if frame_id in seen_ids:
            raise DatasetFormatError(f"{fpath}.frame_id: duplicate frame id {frame_id!r}")
        seen_ids.add(frame_id)
        n_passes = fobj.get("n_passes", 0)
        if not isinstance(n_passes, int) or n_passes < 0:
            raise DatasetFormatError(f"{fpath}.n_passes: expected a non-negative integer")
        rows = _req(fobj, "observations", fpath)
        if not isinstance(rows, list):
            raise DatasetFormatError(f"{fpath}.observations: expected a list")
        observations = []
        for oi, oobj in enumerate(rows):
            opath = f"{fpath}.observations[{oi}]"
            probs = _req(oobj, "class_probs", opath)
            if not isinstance(probs, list) or len(probs) != n_slots:
                raise DatasetFormatError(f"{opath}.class_probs: expected {n_slots} probabilities")
            k = _req(oobj, "k", opath)
            if not isinstance(k, int) or k < 1:
                raise DatasetFormatError(f"{opath}.k: expected a positive integer")
            mask = _mask_from_dict(_req(oobj, "mask", opath), f"{opath}.mask")
            uobj = _req(oobj, "uncertainty", opath)
            upath = f"{opath}.uncertainty"
            n_cells = mask.grid.size
            spat_epi = _as_floats(_req(uobj, "spatial_epistemic", upath), n_cells, f"{upath}.spatial_epistemic")
            spat_alea = _as_floats(_req(uobj, "spatial_aleatoric", upath), n_cells, f"{upath}.spatial_aleatoric")
            sem_epi = _req(uobj, "semantic_epistemic", upath)
            sem_alea = _req(uobj, "semantic_aleatoric", upath)
            for name, v in (("semantic_epistemic", sem_epi), ("semantic_aleatoric", sem_alea)):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise DatasetFormatError(f"{upath}.{name}: expected a number")
            bbox_vals = _as_floats(_req(oobj, "bbox", opath), 4, f"{opath}.bbox")
            try:
                observations.append(
                    Observation(
                        bbox_mean=BBox(*bbox_vals),
                        class_probs_mean=probs,
                        mask_mean=mask,
                        k=k,
                        uncertainty=UncertaintyMaps(
                            spatial_epistemic=np.asarray(spat_epi).reshape(mask.grid.shape),
                            spatial_aleatoric=np.asarray(spat_alea).reshape(mask.grid.shape),
                            semantic_epistemic=float(sem_epi),
                            semantic_aleatoric=float(sem_alea),
                        ),
                    )
                )
            except ValueError as exc:
                raise DatasetFormatError(f"{opath}: {exc}") from exc
        frames.append(ObservationsFrame(frame_id=frame_id, n_passes=n_passes, observations=observations))

    return ObservationsFile(
        classes=classes,
        image_extent=extent,
        frames=frames,
        background_slot=background,
        fuse_config=fuse_config,
    )


def save_observations(obs: ObservationsFile, path: str | Path) -> None:
    _dump_json(observations_to_dict(obs), path)


def load_observations(path: str | Path) -> ObservationsFile:
    return observations_from_dict(_load_json(path))


def save_report(report: dict, path: str | Path) -> None:
    _dump_json(report, path, indent=2)


def write_curve_csv(curve, path: str | Path) -> None:
    """Write a sparsification curve as CSV with 6-decimal fixed point."""
    lines = ["fraction,model,oracle"]
    for f, m, o in zip(curve.fractions, curve.model_curve, curve.oracle_curve):
        lines.append(f"{f:.6f},{m:.6f},{o:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
