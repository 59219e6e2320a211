"""Pinhole intrinsics with Brown-Conrady lens distortion.

Distortion acts on normalised coordinates ``x = (u - cx) / fx``,
``y = (v - cy) / fy``:

    x_d = x (1 + k1 r^2 + k2 r^4 + k3 r^6) + 2 p1 x y + p2 (r^2 + 2 x^2)
    y_d = y (1 + k1 r^2 + k2 r^4 + k3 r^6) + 2 p2 x y + p1 (r^2 + 2 y^2)

with ``r^2 = x^2 + y^2`` taken on the undistorted point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imgcore import InverseMap, LabelMap, RasterImage, remap

FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 50
NEWTON_MAX_ITER = 20
ROUNDTRIP_TOL = 1e-9
BORDER_SEGMENTS = 16
MAX_CANVAS_GROWTH = 8


class DivergenceError(ArithmeticError):
    """Inverse distortion failed to converge: the point is outside the invertible region."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie on the sensor")

    @classmethod
    def from_hfov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        """Square pixels, centred principal point, edge pixel centres at +-hfov/2."""
        cx = (width - 1) / 2.0
        cy = (height - 1) / 2.0
        f = cx / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, cx, cy, width, height)

    def to_normalised(self, u, v):
        return (np.asarray(u, dtype=np.float64) - self.cx) / self.fx, (np.asarray(v, dtype=np.float64) - self.cy) / self.fy

    def to_pixels(self, x, y):
        return np.asarray(x) * self.fx + self.cx, np.asarray(y) * self.fy + self.cy


@dataclass(frozen=True)
class DistortionCoeffs:
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValueError("distortion coefficients must be finite")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.k1, self.k2, self.k3, self.p1, self.p2)

    def is_zero(self) -> bool:
        return not any(self.as_tuple())


def _radial(dist: DistortionCoeffs, r2):
    return 1.0 + r2 * (dist.k1 + r2 * (dist.k2 + r2 * dist.k3))


def _tangential(dist: DistortionCoeffs, x, y, r2):
    return (
        2.0 * dist.p1 * x * y + dist.p2 * (r2 + 2.0 * x * x),
        2.0 * dist.p2 * x * y + dist.p1 * (r2 + 2.0 * y * y),
    )


def distort(x, y, dist: DistortionCoeffs):
    """Vectorised forward model on normalised coordinates."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r2 = x * x + y * y
    rad = _radial(dist, r2)
    tx, ty = _tangential(dist, x, y, r2)
    return x * rad + tx, y * rad + ty


def distort_point(n, dist: DistortionCoeffs) -> tuple[float, float]:
    xd, yd = distort(n[0], n[1], dist)
    return float(xd), float(yd)


def _newton(x, y, xd, yd, dist: DistortionCoeffs):
    k1, k2, k3, p1, p2 = dist.as_tuple()
    for _ in range(NEWTON_MAX_ITER):
        r2 = x * x + y * y
        rad = _radial(dist, r2)
        drad = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)  # d rad / d r2
        fx, fy = distort(x, y, dist)
        ex, ey = fx - xd, fy - yd
        j00 = rad + 2.0 * x * x * drad + 2.0 * p1 * y + 6.0 * p2 * x
        j01 = 2.0 * x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
        j10 = 2.0 * x * y * drad + 2.0 * p2 * y + 2.0 * p1 * x
        j11 = rad + 2.0 * y * y * drad + 2.0 * p2 * x + 6.0 * p1 * y
        det = j00 * j11 - j01 * j10
        det = np.where(det == 0.0, np.nan, det)
        dx = (j11 * ex - j01 * ey) / det
        dy = (j00 * ey - j10 * ex) / det
        x = x - dx
        y = y - dy
        if np.all(np.hypot(dx, dy) < FIXED_POINT_TOL):
            break
    return x, y


def undistort(xd, yd, dist: DistortionCoeffs):
    """Vectorised inverse of :func:`distort`.

    Fixed-point iteration ``x <- (d - tangential(x)) / radial(x)`` from
    ``x = d`` until the step drops below 1e-10 (cap 50 iterations). Points
    that have not settled by then get a Newton polish; anything whose
    round-trip residual still exceeds 1e-9 raises :class:`DivergenceError`.
    """
    xd = np.asarray(xd, dtype=np.float64)
    yd = np.asarray(yd, dtype=np.float64)
    if dist.is_zero():
        return xd.copy(), yd.copy()
    x, y = xd.copy(), yd.copy()
    active = np.ones(x.shape, dtype=bool)
    for _ in range(FIXED_POINT_MAX_ITER):
        r2 = x * x + y * y
        rad = _radial(dist, r2)
        tx, ty = _tangential(dist, x, y, r2)
        with np.errstate(divide="ignore", invalid="ignore"):
            nx = (xd - tx) / rad
            ny = (yd - ty) / rad
        step = np.hypot(nx - x, ny - y)
        x = np.where(active, nx, x)
        y = np.where(active, ny, y)
        active &= ~(step < FIXED_POINT_TOL)
        if not active.any():
            break
    if active.any():
        with np.errstate(all="ignore"):
            x_n, y_n = _newton(x, y, xd, yd, dist)
        x = np.where(active, x_n, x)
        y = np.where(active, y_n, y)
    with np.errstate(all="ignore"):
        fx, fy = distort(x, y, dist)
        resid = np.hypot(fx - xd, fy - yd)
    bad = ~(resid <= ROUNDTRIP_TOL)
    if bad.any():
        first = np.argwhere(bad)[0]
        raise DivergenceError(
            f"inverse distortion diverged at normalised point "
            f"({float(xd[tuple(first)]) if xd.ndim else float(xd)}, "
            f"{float(yd[tuple(first)]) if yd.ndim else float(yd)})"
        )
    return x, y


def undistort_point(d, dist: DistortionCoeffs) -> tuple[float, float]:
    x, y = undistort(d[0], d[1], dist)
    return float(x), float(y)


# ---------------------------------------------------------------------------
# full-frame undistortion


def border_samples(width: int, height: int, segments: int = BORDER_SEGMENTS):
    """Points along the sensor border polygon: ``segments`` per edge, corners included."""
    t = np.linspace(0.0, 1.0, segments + 1)
    w1, h1 = width - 1.0, height - 1.0
    us = np.concatenate([t * w1, np.full_like(t, w1), t * w1, np.zeros_like(t)])
    vs = np.concatenate([np.zeros_like(t), t * h1, np.full_like(t, h1), t * h1])
    return us, vs


def undistorted_canvas(intr: Intrinsics, dist: DistortionCoeffs) -> Intrinsics:
    """Intrinsics of the smallest integer canvas that holds every undistorted source pixel."""
    if dist.is_zero():
        return intr
    us, vs = border_samples(intr.width, intr.height)
    x, y = undistort(*intr.to_normalised(us, vs), dist)
    pu, pv = intr.to_pixels(x, y)
    left = math.floor(pu.min() + 1e-9)
    top = math.floor(pv.min() + 1e-9)
    right = math.ceil(pu.max() - 1e-9)
    bottom = math.ceil(pv.max() - 1e-9)
    width = right - left + 1
    height = bottom - top + 1
    if width > MAX_CANVAS_GROWTH * intr.width or height > MAX_CANVAS_GROWTH * intr.height:
        raise DivergenceError(f"undistorted canvas {width}x{height} is implausibly large")
    return Intrinsics(intr.fx, intr.fy, intr.cx - left, intr.cy - top, width, height)


def undistortion_map(intr: Intrinsics, dist: DistortionCoeffs) -> tuple[InverseMap, Intrinsics]:
    """Inverse map from the enlarged undistorted canvas back into the distorted sensor."""
    out = undistorted_canvas(intr, dist)
    vs, us = np.mgrid[0 : out.height, 0 : out.width].astype(np.float64)
    x, y = out.to_normalised(us, vs)
    xd, yd = distort(x, y, dist)
    su, sv = intr.to_pixels(xd, yd)
    return InverseMap(su, sv), out


def undistort_full_frame(img, intr: Intrinsics, dist: DistortionCoeffs):
    """Undistort without cropping; returns ``(image, mask, canvas_intrinsics)``.

    The mask is False exactly where the forward-distorted position of an
    output pixel falls off the source sensor. Label maps are accepted too and
    resampled nearest-neighbour.
    """
    if not isinstance(img, (RasterImage, LabelMap)):
        raise TypeError("expected a RasterImage or LabelMap")
    if (img.width, img.height) != (intr.width, intr.height):
        raise ValueError("image size does not match the intrinsics")
    imap, out_intr = undistortion_map(intr, dist)
    out, mask = remap(img, imap)
    return out, mask, out_intr

