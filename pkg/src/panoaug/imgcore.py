"""Raster buffers, sub-pixel sampling, inverse-map remapping and PNG I/O.

Coordinate convention used everywhere in the package: pixel ``(i, j)`` has
its centre at continuous ``(x=i, y=j)``; x grows to the right, y downward.
A continuous coordinate is *inside* an image when it lies in
``[0, w-1] x [0, h-1]`` (with a tolerance of ``EDGE_EPS`` to absorb
round-off from projective maps that land exactly on the border).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

EDGE_EPS = 1e-6
DEFAULT_IGNORE = 255

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageIOError(Exception):
    """Base class for raster read/write problems."""


class UnsupportedImageError(ImageIOError):
    """Bit depth, colour type or container is not an 8-bit 1/3-channel PNG."""


class TruncatedImageError(ImageIOError):
    """The PNG stream ended early or failed to decode."""


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit, 3-channel image stored as a read-only ``(h, w, 3)`` array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"RasterImage needs shape (h, w, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("RasterImage must be at least 1x1")
        object.__setattr__(self, "data", _frozen(arr, np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Single-channel class-index image; ``ignore_value`` marks unlabelled pixels."""

    data: np.ndarray
    ignore_value: int = DEFAULT_IGNORE

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"LabelMap needs shape (h, w), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("LabelMap must be at least 1x1")
        if not 0 <= self.ignore_value <= 255:
            raise ValueError("ignore_value must fit in 8 bits")
        object.__setattr__(self, "data", _frozen(arr, np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def values(self) -> set[int]:
        return {int(v) for v in np.unique(self.data)}

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.ignore_value == other.ignore_value and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ValidityMask:
    """Per-pixel boolean: True where the pixel carries real image content."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValueError(f"ValidityMask needs shape (h, w), got {arr.shape}")
        object.__setattr__(self, "bits", _frozen(arr, bool))

    @classmethod
    def full(cls, height: int, width: int, value: bool = True) -> "ValidityMask":
        return cls(np.full((height, width), value, dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def fraction(self) -> float:
        return float(self.bits.mean())

    def __eq__(self, other):
        if not isinstance(other, ValidityMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InverseMap:
    """Destination-to-source lookup: ``(sx[j, i], sy[j, i])`` for destination pixel ``(i, j)``.

    NaN in either array marks the destination pixel as unmapped.
    """

    sx: np.ndarray
    sy: np.ndarray
    _shape: tuple[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        sx = np.asarray(self.sx, dtype=np.float64)
        sy = np.asarray(self.sy, dtype=np.float64)
        if sx.shape != sy.shape or sx.ndim != 2:
            raise ValueError("sx and sy must be 2-D arrays of equal shape")
        object.__setattr__(self, "sx", _frozen(sx, np.float64))
        object.__setattr__(self, "sy", _frozen(sy, np.float64))
        object.__setattr__(self, "_shape", sx.shape)

    @classmethod
    def identity(cls, height: int, width: int) -> "InverseMap":
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(xs, ys)

    @property
    def width(self) -> int:
        return self._shape[1]

    @property
    def height(self) -> int:
        return self._shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape


Raster = Union[RasterImage, LabelMap, ValidityMask]


# ---------------------------------------------------------------------------
# sampling


def inside(xs, ys, width: int, height: int) -> np.ndarray:
    """Vectorised in-bounds test; NaN coordinates are outside."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    return (
        (xs >= -EDGE_EPS)
        & (xs <= width - 1 + EDGE_EPS)
        & (ys >= -EDGE_EPS)
        & (ys <= height - 1 + EDGE_EPS)
    )


def round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5)


def corner_indices(coord: np.ndarray, size: int):
    c = np.clip(coord, 0.0, size - 1)
    if size == 1:
        zero = np.zeros(c.shape, dtype=np.intp)
        return zero, zero, np.zeros(c.shape)
    i0 = np.minimum(np.floor(c).astype(np.intp), size - 2)
    return i0, i0 + 1, c - i0


def bilinear_sample_array(arr: np.ndarray, xs, ys) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup into an ``(h, w[, c])`` array.

    Returns ``(values, ok)``: values rounded half-up to uint8, and the
    in-bounds flags. Values at outside positions are meaningless.
    """
    h, w = arr.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ok = inside(xs, ys, w, h)
    xq = np.where(ok, xs, 0.0)
    yq = np.where(ok, ys, 0.0)
    x0, x1, fx = corner_indices(xq, w)
    y0, y1, fy = corner_indices(yq, h)
    a = arr.astype(np.float64)
    if a.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = a[y0, x0] * (1.0 - fx) + a[y0, x1] * fx
    bot = a[y1, x0] * (1.0 - fx) + a[y1, x1] * fx
    val = top * (1.0 - fy) + bot * fy
    return np.clip(round_half_up(val), 0, 255).astype(np.uint8), ok


def nearest_indices(xs, ys, width: int, height: int):
    """Index of the closest pixel centre (ties go toward +inf) plus in-bounds flags."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ok = inside(xs, ys, width, height)
    ix = np.clip(round_half_up(np.where(ok, xs, 0.0)), 0, width - 1).astype(np.intp)
    iy = np.clip(round_half_up(np.where(ok, ys, 0.0)), 0, height - 1).astype(np.intp)
    return ix, iy, ok


def sample_bilinear(img: RasterImage, x: float, y: float):
    """Blend of the four surrounding pixels; ``None`` when (x, y) is outside."""
    val, ok = bilinear_sample_array(img.data, x, y)
    if not bool(ok):
        return None
    return tuple(int(v) for v in val)


def sample_nearest(labels: LabelMap, x: float, y: float):
    ix, iy, ok = nearest_indices(x, y, labels.width, labels.height)
    if not bool(ok):
        return None
    return int(labels.data[iy, ix])


def remap(src, imap: InverseMap, fill=None):
    """Render ``src`` through ``imap``; returns ``(output, ValidityMask)``.

    Images are sampled bilinearly and filled with black; label maps are
    sampled nearest-neighbour and filled with their ignore value.
    """
    if isinstance(src, RasterImage):
        vals, ok = bilinear_sample_array(src.data, imap.sx, imap.sy)
        fill_px = np.asarray((0, 0, 0) if fill is None else fill, dtype=np.uint8)
        out = np.where(ok[..., None], vals, fill_px)
        return RasterImage(out), ValidityMask(ok)
    if isinstance(src, LabelMap):
        ix, iy, ok = nearest_indices(imap.sx, imap.sy, src.width, src.height)
        fill_v = src.ignore_value if fill is None else int(fill)
        out = np.where(ok, src.data[iy, ix], np.uint8(fill_v))
        return LabelMap(out, src.ignore_value), ValidityMask(ok)
    raise TypeError(f"cannot remap {type(src).__name__}")


# ---------------------------------------------------------------------------
# PNG I/O


def _png_header(path: Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 8 or head[:8] != _PNG_SIGNATURE:
        raise UnsupportedImageError(f"{path}: not a PNG file")
    if len(head) < 33 or head[12:16] != b"IHDR":
        raise TruncatedImageError(f"{path}: PNG header is truncated")
    bit_depth, color_type = struct.unpack(">BB", head[24:26])
    return bit_depth, color_type


def load_image(path, ignore_value: int = DEFAULT_IGNORE):
    """Read an 8-bit PNG: RGB becomes a RasterImage, grey/palette a LabelMap."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    bit_depth, color_type = _png_header(path)
    if bit_depth != 8:
        raise UnsupportedImageError(f"{path}: unsupported bit depth {bit_depth}")
    if color_type not in (0, 2, 3):
        raise UnsupportedImageError(f"{path}: unsupported PNG colour type {color_type}")
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise TruncatedImageError(f"{path}: {exc}") from exc
    if color_type == 2:
        return RasterImage(arr)
    return LabelMap(arr, ignore_value)


def load_mask(path) -> ValidityMask:
    labels = load_image(path)
    if not isinstance(labels, LabelMap):
        raise UnsupportedImageError(f"{path}: masks are single-channel")
    vals = labels.values()
    if not vals <= {0, 255}:
        raise UnsupportedImageError(f"{path}: mask samples must be 0 or 255")
    return ValidityMask(labels.data == 255)


def save_image(raster: Raster, path) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    if isinstance(raster, RasterImage):
        im = Image.fromarray(np.ascontiguousarray(raster.data))
    elif isinstance(raster, LabelMap):
        im = Image.fromarray(np.ascontiguousarray(raster.data))
    elif isinstance(raster, ValidityMask):
        im = Image.fromarray(np.where(raster.bits, 255, 0).astype(np.uint8))
    else:
        raise TypeError(f"cannot save {type(raster).__name__}")
    im.save(path, format="PNG")
