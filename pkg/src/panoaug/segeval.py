"""Class tables, label remapping and confusion-matrix segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from .imgcore import DEFAULT_IGNORE, LabelMap


class LabelRangeError(ValueError):
    """A label value is neither a known class nor the ignore value."""


@dataclass(frozen=True)
class ClassTable:
    names: tuple[str, ...]
    ignore: int = DEFAULT_IGNORE

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("class table is empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        if self.ignore < len(self.names):
            raise ValueError("ignore id collides with a class id")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ClassTable":
        entries = sorted(((int(e["id"]), str(e["name"])) for e in doc.get("classes") or []))
        ids = [i for i, _ in entries]
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be dense from 0, got {ids}")
        return cls(tuple(n for _, n in entries), int(doc.get("ignore", DEFAULT_IGNORE)))


@dataclass(frozen=True)
class RemapTable:
    """Total map from source ids ``0..S-1`` onto destination ids or the ignore value."""

    targets: tuple[int, ...]
    ignore: int = DEFAULT_IGNORE

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if not self.targets:
            raise ValueError("remap table is empty")
        if not all(0 <= t <= 255 for t in self.targets):
            raise ValueError("remap targets must fit in 8 bits")

    @property
    def num_sources(self) -> int:
        return len(self.targets)

    @classmethod
    def identity(cls, n: int, ignore: int = DEFAULT_IGNORE) -> "RemapTable":
        return cls(tuple(range(n)), ignore)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RemapTable":
        ignore = int(doc.get("ignore", DEFAULT_IGNORE))
        pairs = {}
        for e in doc.get("remap") or []:
            src = int(e["from"])
            if src in pairs:
                raise ValueError(f"source id {src} is mapped twice")
            to = e["to"]
            pairs[src] = ignore if to in ("ignore", None) else int(to)
        if sorted(pairs) != list(range(len(pairs))):
            raise ValueError("remap must cover every source id from 0 without gaps")
        return cls(tuple(pairs[i] for i in range(len(pairs))), ignore)

    def lut(self) -> np.ndarray:
        lut = np.full(256, -1, dtype=np.int16)
        lut[: self.num_sources] = self.targets
        lut[self.ignore] = self.ignore
        return lut


def _load_yaml(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh) or {}


def load_class_table(path) -> ClassTable:
    return ClassTable.from_dict(_load_yaml(path))


def load_remap_table(path) -> RemapTable:
    return RemapTable.from_dict(_load_yaml(path))


def remap_labels(labels: LabelMap, table: RemapTable) -> LabelMap:
    lut = table.lut()
    out = lut[labels.data]
    if (out < 0).any():
        bad = sorted({int(v) for v in np.unique(labels.data[out < 0])})
        raise LabelRangeError(f"label ids {bad} are outside the remap table (0..{table.num_sources - 1})")
    return LabelMap(out.astype(np.uint8), table.ignore)


# ---------------------------------------------------------------------------
# confusion matrix


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[g, p]`` pixels with ground truth ``g`` predicted as ``p``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (c < 0).any():
            raise ValueError("counts must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    __hash__ = None


def accumulate(cm: ConfusionMatrix, gt: LabelMap, pred: LabelMap) -> ConfusionMatrix:
    """Add one (ground truth, prediction) pair; pixels ignored on either side are skipped."""
    if gt.shape != pred.shape:
        raise ValueError(f"dimension mismatch: gt {gt.shape} vs pred {pred.shape}")
    k = cm.num_classes
    g = gt.data.ravel().astype(np.int64)
    p = pred.data.ravel().astype(np.int64)
    keep = (g != gt.ignore_value) & (p != pred.ignore_value)
    g, p = g[keep], p[keep]
    if g.size and (g.max() >= k or p.max() >= k):
        raise LabelRangeError(f"label value >= {k} that is not the ignore value")
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(cm.counts + counts)


@dataclass(frozen=True)
class Metrics:
    """Percentages: mean per-class accuracy, mean IoU and global accuracy."""

    class_accuracy: float
    mean_iou: float
    global_accuracy: float
    per_class_accuracy: tuple[Optional[float], ...]
    per_class_iou: tuple[Optional[float], ...]
    gt_pixels: tuple[int, ...]
    total_pixels: int


def metrics(cm: ConfusionMatrix) -> Metrics:
    """C, mIoU and G from a confusion matrix.

    C averages recall over classes present in the ground truth; mIoU averages
    IoU over classes present in ground truth or prediction. Arithmetic is done
    on exact fractions and rounded to float once.
    """
    n = cm.counts
    total = int(n.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    diag = [int(v) for v in np.diag(n)]
    t = [int(v) for v in n.sum(axis=1)]
    p = [int(v) for v in n.sum(axis=0)]
    acc = [Fraction(d, tg) if tg > 0 else None for d, tg in zip(diag, t)]
    iou = [Fraction(d, tg + pg - d) if tg + pg > 0 else None for d, tg, pg in zip(diag, t, p)]
    acc_present = [a for a in acc if a is not None]
    iou_present = [i for i in iou if i is not None]
    return Metrics(
        class_accuracy=float(100 * sum(acc_present) / len(acc_present)),
        mean_iou=float(100 * sum(iou_present) / len(iou_present)),
        global_accuracy=float(Fraction(100 * sum(diag), total)),
        per_class_accuracy=tuple(None if a is None else float(100 * a) for a in acc),
        per_class_iou=tuple(None if i is None else float(100 * i) for i in iou),
        gt_pixels=tuple(t),
        total_pixels=total,
    )


# ---------------------------------------------------------------------------
# reporting


def _pct(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.2f}"


def format_report(m: Metrics, classes: Optional[Sequence[str]] = None) -> str:
    names = list(classes) if classes is not None else [str(i) for i in range(len(m.gt_pixels))]
    width = max(8, *(len(s) for s in names))
    lines = [f"{'class':<{width}}  {'acc%':>7}  {'IoU%':>7}  {'gt px':>10}"]
    for name, a, i, t in zip(names, m.per_class_accuracy, m.per_class_iou, m.gt_pixels):
        lines.append(f"{name:<{width}}  {_pct(a):>7}  {_pct(i):>7}  {t:>10}")
    lines.append("")
    lines.append(f"C = {m.class_accuracy:.2f}   mIoU = {m.mean_iou:.2f}   G = {m.global_accuracy:.2f}   pixels = {m.total_pixels}")
    return "\n".join(lines)


def report_records(m: Metrics, classes: Optional[Sequence[str]] = None) -> dict:
    names = list(classes) if classes is not None else [str(i) for i in range(len(m.gt_pixels))]
    return {
        "C": round(m.class_accuracy, 2),
        "mIoU": round(m.mean_iou, 2),
        "G": round(m.global_accuracy, 2),
        "total_pixels": m.total_pixels,
        "classes": [
            {
                "id": k,
                "name": name,
                "accuracy": None if a is None else round(a, 2),
                "iou": None if i is None else round(i, 2),
                "gt_pixels": t,
            }
            for k, (name, a, i, t) in enumerate(zip(names, m.per_class_accuracy, m.per_class_iou, m.gt_pixels))
        ],
    }
