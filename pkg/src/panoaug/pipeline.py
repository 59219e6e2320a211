"""Batch orchestration: augmentation runs, rig stitching, evaluation and previews.

Determinism rests on one rule: every random draw comes from a generator
seeded by :func:`derive_stream_seed` on (master seed, record, copy, step), so
results do not depend on how work is spread across processes.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from .camera import undistort_full_frame
from .geomaug import ALPHA_RANGE, SkewSpec, skew_warp
from .imgcore import (
    ImageIOError,
    LabelMap,
    RasterImage,
    ValidityMask,
    load_image,
    save_image,
)
from .panorama import Frame, FrameMismatchError, build_canvas, load_rig, stitch, stitch_labels, valid_theta_span
from .photoaug import GammaPolicy, add_noise, apply_gamma, blur, center_crop, flip_horizontal, sample_gamma
from .segeval import (
    ClassTable,
    ConfusionMatrix,
    LabelRangeError,
    Metrics,
    accumulate,
    load_class_table,
    load_remap_table,
    metrics,
    remap_labels,
)

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class ConfigError(ValueError):
    """Malformed manifest, policy, rig or class file."""


class EmptyEvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# seeding


def _mix64(z):
    # splitmix64 finaliser; works on Python ints and numpy uint64 arrays alike
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_stream_seed(master_seed, record_index, copy_index, step_index):
    """64-bit seed for one (record, copy, step) stream.

    Each input is folded in as ``h <- mix(h ^ x + golden)``; every fold is a
    bijection of ``h`` for a fixed ``x``. Accepts numpy uint64 arrays for bulk use.
    """
    vec = any(isinstance(v, np.ndarray) for v in (master_seed, record_index, copy_index, step_index))
    if vec:
        cast = lambda v: np.asarray(v).astype(np.uint64)  # noqa: E731
        m = np.uint64(MASK64)
        g = np.uint64(_GOLDEN)
        with np.errstate(over="ignore"):
            h = _mix64_np(cast(master_seed) + g)
            for v in (record_index, copy_index, step_index):
                h = _mix64_np((h ^ cast(v)) + g)
        return h & m
    h = _mix64((int(master_seed) & MASK64) + _GOLDEN & MASK64)
    for v in (record_index, copy_index, step_index):
        h = _mix64(((h ^ (int(v) & MASK64)) + _GOLDEN) & MASK64)
    return h


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def stream(master_seed, record_index, copy_index, step_index) -> np.random.Generator:
    return np.random.default_rng(derive_stream_seed(master_seed, record_index, copy_index, step_index))


# ---------------------------------------------------------------------------
# manifest and policy


@dataclass(frozen=True)
class ManifestRecord:
    index: int
    image: Path
    label: Optional[Path] = None


@dataclass(frozen=True)
class Manifest:
    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if [r.index for r in self.records] != list(range(len(self.records))):
            raise ConfigError("manifest indices must be dense from 0")

    def __len__(self):
        return len(self.records)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple]) -> "Manifest":
        recs = []
        for i, pair in enumerate(pairs):
            img, lbl = (pair[0], pair[1] if len(pair) > 1 else None)
            recs.append(ManifestRecord(i, Path(img), Path(lbl) if lbl else None))
        return cls(tuple(recs))


def load_manifest(path) -> Manifest:
    """One ``image_path,label_path`` record per line; label optional, '#' starts a comment."""
    path = Path(path)
    base = path.parent
    recs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) > 2:
                raise ConfigError(f"{path}:{lineno}: expected 'image_path[,label_path]'")
            img = base / row[0].strip()
            lbl = row[1].strip() if len(row) > 1 else ""
            recs.append(ManifestRecord(len(recs), img, base / lbl if lbl else None))
    return Manifest(tuple(recs))


@dataclass(frozen=True)
class Skew:
    sides: tuple[str, ...]
    alphas: tuple[float, ...]

    def variants(self):
        return [Skew((s,), (a,)) for s in self.sides for a in self.alphas]


@dataclass(frozen=True)
class Gamma:
    policy: GammaPolicy


@dataclass(frozen=True)
class Flip:
    pass


@dataclass(frozen=True)
class Crop:
    fraction: float


@dataclass(frozen=True)
class Noise:
    sigma: float


@dataclass(frozen=True)
class Blur:
    sigma: float


Step = Union[Skew, Gamma, Flip, Crop, Noise, Blur]
_GEOMETRIC = (Skew, Flip, Crop)


@dataclass(frozen=True)
class AugPolicy:
    steps: tuple[Step, ...] = ()
    copies_per_source: int = 1
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.copies_per_source < 1:
            raise ConfigError("copies_per_source must be >= 1")
        if not self.steps and self.copies_per_source != 1:
            raise ConfigError("a policy without steps must use copies_per_source = 1")

    def variants(self) -> list[tuple[Step, ...]]:
        """Concrete step lists: the cartesian product of every enumerated skew choice."""
        options = [s.variants() if isinstance(s, Skew) else [s] for s in self.steps]
        return [tuple(v) for v in itertools.product(*options)]


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _parse_step(entry) -> Optional[Step]:
    if isinstance(entry, str):
        entry = {entry: True}
    if not isinstance(entry, Mapping) or len(entry) != 1:
        raise ConfigError(f"each policy step must be a single-key mapping, got {entry!r}")
    (kind, args), = entry.items()
    args = args if isinstance(args, Mapping) else {}
    try:
        if kind == "skew":
            sides = _as_list(entry[kind].get("side", "left"))
            if sides == ["both"]:
                sides = ["left", "right"]
            alphas = [float(a) for a in _as_list(entry[kind]["alpha_deg"])]
            lo, hi = ALPHA_RANGE
            for s in sides:
                if s not in ("left", "right"):
                    raise ConfigError(f"skew.side must be left/right/both, got {s!r}")
            for a in alphas:
                if not lo <= a <= hi:
                    raise ConfigError(f"skew.alpha_deg {a} outside [{lo}, {hi}]")
            return Skew(tuple(sides), tuple(alphas))
        if kind == "gamma":
            return Gamma(GammaPolicy(float(args.get("mu", 1.0)), float(args.get("sigma", 0.0))))
        if kind == "flip":
            return Flip() if entry[kind] else None
        if kind == "crop":
            frac = float(args["fraction"])
            if not 0.0 < frac <= 1.0:
                raise ConfigError("crop.fraction must lie in (0, 1]")
            return Crop(frac)
        if kind == "noise":
            sig = float(args["sigma"])
            if not (math.isfinite(sig) and sig >= 0):
                raise ConfigError("noise.sigma must be finite and >= 0")
            return Noise(sig)
        if kind == "blur":
            sig = float(args["sigma"])
            if not (math.isfinite(sig) and sig >= 0):
                raise ConfigError("blur.sigma must be finite and >= 0")
            return Blur(sig)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad {kind!r} step: {exc}") from exc
    raise ConfigError(f"unknown augmentation step {kind!r}")


def policy_from_dict(doc: Mapping, seed: Optional[int] = None) -> AugPolicy:
    steps = [s for s in (_parse_step(e) for e in doc.get("steps") or []) if s is not None]
    master = seed if seed is not None else int(doc.get("seed", 0))
    return AugPolicy(tuple(steps), int(doc.get("copies_per_source", 1)), master)


def load_policy(path, seed: Optional[int] = None) -> AugPolicy:
    with open(path, encoding="utf-8") as fh:
        return policy_from_dict(yaml.safe_load(fh) or {}, seed)


# ---------------------------------------------------------------------------
# augmentation run


def _fmt(v: float) -> str:
    return f"{v:g}"


def _signature(parts: list[str]) -> str:
    return "_".join(parts) if parts else "orig"


def _apply_steps(img, labels, steps, policy: AugPolicy, record: int, copy: int):
    sig, trail = [], []
    for k, step in enumerate(steps):
        if isinstance(step, Skew):
            side, alpha = step.sides[0], step.alphas[0]
            img, labels, _ = skew_warp(img, labels, SkewSpec(side, alpha, img.width, img.height))
            sig.append(f"skew{side[0].upper()}{_fmt(alpha)}")
            trail.append({"op": "skew", "side": side, "alpha_deg": alpha})
        elif isinstance(step, Gamma):
            seed = derive_stream_seed(policy.master_seed, record, copy, k)
            g = sample_gamma(step.policy, np.random.default_rng(seed))
            img = apply_gamma(img, g)
            sig.append(f"g{g:.2f}")
            trail.append({"op": "gamma", "mu": step.policy.mu, "sigma": step.policy.sigma, "gamma": repr(float(g)), "seed": seed})
        elif isinstance(step, Flip):
            img, labels = flip_horizontal(img, labels)
            sig.append("flip")
            trail.append({"op": "flip"})
        elif isinstance(step, Crop):
            img, labels = center_crop(img, labels, step.fraction)
            sig.append(f"crop{_fmt(step.fraction)}")
            trail.append({"op": "crop", "fraction": step.fraction})
        elif isinstance(step, Noise):
            seed = derive_stream_seed(policy.master_seed, record, copy, k)
            img = add_noise(img, step.sigma, np.random.default_rng(seed))
            sig.append(f"n{_fmt(step.sigma)}")
            trail.append({"op": "noise", "sigma": step.sigma, "seed": seed})
        elif isinstance(step, Blur):
            img = blur(img, step.sigma)
            sig.append(f"b{_fmt(step.sigma)}")
            trail.append({"op": "blur", "sigma": step.sigma})
    return img, labels, _signature(sig), trail


@dataclass(frozen=True)
class _Task:
    record: ManifestRecord
    copy: int
    stem: str
    policy: AugPolicy
    out_dir: Path


def _process_item(task: _Task):
    rec, policy = task.record, task.policy
    try:
        img = load_image(rec.image)
        if not isinstance(img, RasterImage):
            raise ImageIOError(f"{rec.image}: expected a 3-channel image")
        labels = None
        if rec.label is not None:
            labels = load_image(rec.label)
            if not isinstance(labels, LabelMap):
                raise ImageIOError(f"{rec.label}: expected a 1-channel label map")
            if labels.shape != img.shape:
                raise ImageIOError(f"{rec.label}: size differs from {rec.image}")
    except (OSError, ImageIOError) as exc:
        return [], [{"record": rec.index, "path": str(rec.image), "reason": str(exc)}]

    entries = []
    copy = task.copy
    for v, steps in enumerate(policy.variants()):
        out_img, out_lbl, sig, trail = _apply_steps(img, labels, steps, policy, rec.index, copy)
        name = f"{task.stem}__c{copy}__{sig}"
        img_path = task.out_dir / f"{name}.png"
        lbl_path = task.out_dir / f"{name}__label.png" if labels is not None else None
        if not steps:
            shutil.copyfile(rec.image, img_path)
            if lbl_path is not None:
                shutil.copyfile(rec.label, lbl_path)
        else:
            save_image(out_img, img_path)
            if lbl_path is not None:
                save_image(out_lbl, lbl_path)
        entries.append(
            {
                "record": rec.index,
                "copy": copy,
                "variant": v,
                "source": rec.image.name,
                "image": img_path.name,
                "label": None if lbl_path is None else lbl_path.name,
                "steps": trail,
            }
        )
    return entries, []


@dataclass
class AugmentSummary:
    records: int
    written: int
    skipped: list = field(default_factory=list)
    log_path: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        return 2 if self.skipped else 0


def _unique_stems(manifest: Manifest) -> list[str]:
    stems = [r.image.stem for r in manifest.records]
    dup = {s for s in stems if stems.count(s) > 1}
    return [f"{s}-r{i}" if s in dup else s for i, s in enumerate(stems)]


def run_augment(manifest: Manifest, policy: AugPolicy, out_dir, workers: int = 1) -> AugmentSummary:
    """Expand every manifest record by the policy and write images, labels and ``run_log.jsonl``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        _Task(rec, copy, stem, policy, out_dir)
        for rec, stem in zip(manifest.records, _unique_stems(manifest))
        for copy in range(policy.copies_per_source)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_process_item, tasks))
    else:
        results = [_process_item(t) for t in tasks]

    entries = sorted((e for r in results for e in r[0]), key=lambda e: (e["record"], e["copy"], e["variant"]))
    skipped = sorted({s["record"]: s for r in results for s in r[1]}.values(), key=lambda s: s["record"])
    for s in skipped:
        log.warning("skipped record %d (%s): %s", s["record"], s["path"], s["reason"])
    log_path = out_dir / "run_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    return AugmentSummary(len(manifest), len(entries), skipped, log_path)


# ---------------------------------------------------------------------------
# stitching


_POSITIONS = ("left", "front", "right")


def match_rig_inputs(rig, named: Mapping[str, object]) -> dict:
    """Assign inputs given as left/front/right to rig camera ids (by name, else by order)."""
    given = {k: v for k, v in named.items() if v is not None}
    if set(given) <= set(rig.ids) and len(given) == len(rig.ids):
        return given
    if len(given) == len(rig.ids):
        ordered = [given[k] for k in _POSITIONS if k in given] + [v for k, v in given.items() if k not in _POSITIONS]
        return dict(zip(rig.ids, ordered))
    raise FrameMismatchError(f"rig has {len(rig.ids)} cameras ({rig.ids}) but {len(given)} frames were given")


def _undistorted_frames(rig, paths: Mapping[str, Path], kind):
    frames = {}
    for cam in rig.cameras:
        raster = load_image(paths[cam.id])
        if not isinstance(raster, kind):
            raise ImageIOError(f"{paths[cam.id]}: wrong channel count for a {kind.__name__}")
        out, mask, intr = undistort_full_frame(raster, cam.intrinsics, cam.distortion)
        frames[cam.id] = Frame(out, mask, intr)
    return frames


def run_stitch(rig_file, frames: Mapping[str, object], out_prefix, labels: Optional[Mapping[str, object]] = None) -> dict:
    """Undistort each camera frame, stitch the panorama and write it with its masks.

    ``frames``/``labels`` are keyed by rig camera id or by left/front/right.
    """
    rig = load_rig(rig_file)
    img_paths = {k: Path(v) for k, v in match_rig_inputs(rig, frames).items()}
    prefix = Path(out_prefix)
    if not prefix.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {prefix.parent}")

    frames_u = _undistorted_frames(rig, img_paths, RasterImage)
    canvas = build_canvas(rig, frames_u)
    pano = stitch(rig, frames_u, canvas)
    written = {
        "panorama": f"{prefix}_pano.png",
        "mask": f"{prefix}_mask.png",
    }
    save_image(pano.raster, written["panorama"])
    save_image(pano.mask, written["mask"])
    for cam_id, m in pano.contributions.items():
        written[f"contrib_{cam_id}"] = f"{prefix}_contrib_{cam_id}.png"
        save_image(m, written[f"contrib_{cam_id}"])

    if labels:
        lbl_paths = {k: Path(v) for k, v in match_rig_inputs(rig, labels).items()}
        lframes = _undistorted_frames(rig, lbl_paths, LabelMap)
        lpano = stitch_labels(rig, lframes, canvas)
        written["labels"] = f"{prefix}_labels.png"
        written["labels_mask"] = f"{prefix}_labels_mask.png"
        save_image(lpano.raster, written["labels"])
        save_image(lpano.mask, written["labels_mask"])

    return {
        "width": canvas.width,
        "height": canvas.height,
        "pixels_per_radian": canvas.pixels_per_radian,
        "theta_span_deg": math.degrees(valid_theta_span(pano.mask, canvas)),
        "valid_fraction": pano.mask.fraction(),
        "camera_pixels": {k: int(m.bits.sum()) for k, m in pano.contributions.items()},
        "outputs": written,
    }


def run_undistort(rig_file, camera_id: str, in_path, out_path, mask_path) -> dict:
    rig = load_rig(rig_file)
    cam = rig.camera(camera_id)
    raster = load_image(in_path)
    out, mask, intr = undistort_full_frame(raster, cam.intrinsics, cam.distortion)
    save_image(out, out_path)
    save_image(mask, mask_path)
    return {
        "width": intr.width,
        "height": intr.height,
        "cx": intr.cx,
        "cy": intr.cy,
        "valid_fraction": mask.fraction(),
    }


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    metrics: Metrics
    classes: ClassTable
    pairs: list
    skipped: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 2 if self.skipped else 0


def run_evaluate(gt_dir, pred_dir, class_file, remap_file=None) -> EvalReport:
    """Accumulate one confusion matrix over all same-named PNG pairs and score it."""
    classes = load_class_table(class_file)
    remap = load_remap_table(remap_file) if remap_file else None
    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    gt_names = {p.name for p in gt_dir.glob("*.png")}
    pred_names = {p.name for p in pred_dir.glob("*.png")}
    skipped = [{"name": n, "reason": "no prediction"} for n in sorted(gt_names - pred_names)]
    skipped += [{"name": n, "reason": "no ground truth"} for n in sorted(pred_names - gt_names)]
    common = sorted(gt_names & pred_names)
    if not common:
        raise EmptyEvaluationError(f"no matching file names between {gt_dir} and {pred_dir}")

    cm = ConfusionMatrix.zeros(classes.num_classes)
    pairs = []
    for name in common:
        try:
            gt = load_image(gt_dir / name, classes.ignore)
            pred = load_image(pred_dir / name, classes.ignore)
            if not (isinstance(gt, LabelMap) and isinstance(pred, LabelMap)):
                raise ImageIOError("label maps must be single-channel")
            if remap is not None:
                gt = remap_labels(gt, remap)
                pred = remap_labels(pred, remap)
                gt = LabelMap(gt.data, classes.ignore)
                pred = LabelMap(pred.data, classes.ignore)
            cm = accumulate(cm, gt, pred)
            pairs.append(name)
        except (OSError, ImageIOError, LabelRangeError, ValueError) as exc:
            log.warning("skipped %s: %s", name, exc)
            skipped.append({"name": name, "reason": str(exc)})
    if not pairs:
        raise EmptyEvaluationError("every candidate pair was rejected")
    return EvalReport(metrics(cm), classes, pairs, skipped)


# ---------------------------------------------------------------------------
# preview montage

SEPARATOR = 2
SEPARATOR_COLOR = (255, 255, 255)


def _as_rgb(r) -> np.ndarray:
    if isinstance(r, RasterImage):
        return r.data
    if isinstance(r, LabelMap):
        return np.repeat(r.data[..., None], 3, axis=2)
    if isinstance(r, ValidityMask):
        return np.repeat(np.where(r.bits, 255, 0).astype(np.uint8)[..., None], 3, axis=2)
    raise TypeError(f"cannot preview {type(r).__name__}")


def montage(images: Sequence, columns: int) -> RasterImage:
    """Tile rasters left-to-right, top-to-bottom at native size with 2-px separators."""
    if not images:
        raise ValueError("montage needs at least one image")
    if columns < 1:
        raise ValueError("columns must be >= 1")
    tiles = [_as_rgb(im) for im in images]
    ncols = min(columns, len(tiles))
    nrows = math.ceil(len(tiles) / ncols)
    col_w = [max(t.shape[1] for t in tiles[c::ncols]) for c in range(ncols)]
    row_h = [max(t.shape[0] for t in tiles[r * ncols : (r + 1) * ncols]) for r in range(nrows)]
    width = sum(col_w) + SEPARATOR * (ncols - 1)
    height = sum(row_h) + SEPARATOR * (nrows - 1)
    out = np.zeros((height, width, 3), dtype=np.uint8)
    xs = np.cumsum([0] + [w + SEPARATOR for w in col_w])
    ys = np.cumsum([0] + [h + SEPARATOR for h in row_h])
    for c in range(1, ncols):
        out[:, xs[c] - SEPARATOR : xs[c]] = SEPARATOR_COLOR
    for r in range(1, nrows):
        out[ys[r] - SEPARATOR : ys[r], :] = SEPARATOR_COLOR
    for i, t in enumerate(tiles):
        r, c = divmod(i, ncols)
        out[ys[r] : ys[r] + t.shape[0], xs[c] : xs[c] + t.shape[1]] = t
    return RasterImage(out)


def make_preview(images: Sequence, out_path, columns: int) -> RasterImage:
    rasters = [load_image(im) if isinstance(im, (str, Path)) else im for im in images]
    out = montage(rasters, columns)
    save_image(out, out_path)
    return out
