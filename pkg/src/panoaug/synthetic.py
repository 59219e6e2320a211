"""Synthetic rigs and scenes for demos and geometric checks."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .camera import DistortionCoeffs, Intrinsics, undistort
from .imgcore import LabelMap, RasterImage, ValidityMask
from .panorama import Extrinsics, Frame, Rig, RigCamera, rotation_from_extrinsics


def three_camera_rig(
    width: int = 640,
    height: int = 360,
    hfov_deg: float = 100.0,
    side_yaw_deg: float = 40.0,
    center_pitch_deg: float = 15.0,
    distortion: Optional[DistortionCoeffs] = None,
) -> Rig:
    """Left/front/right rig: sides yawed +-side_yaw, front pitched (+ = down)."""
    intr = Intrinsics.from_hfov(width, height, hfov_deg)
    dist = distortion or DistortionCoeffs()
    return Rig(
        (
            RigCamera("left", intr, dist, Extrinsics(yaw=-side_yaw_deg)),
            RigCamera("front", intr, dist, Extrinsics(pitch=center_pitch_deg)),
            RigCamera("right", intr, dist, Extrinsics(yaw=side_yaw_deg)),
        )
    )


def solid_frame(intr: Intrinsics, color: Sequence[int]) -> Frame:
    data = np.empty((intr.height, intr.width, 3), dtype=np.uint8)
    data[:] = np.asarray(color, dtype=np.uint8)
    return Frame(RasterImage(data), ValidityMask.full(intr.height, intr.width), intr)


def solid_label_frame(intr: Intrinsics, class_id: int, ignore_value: int = 255) -> Frame:
    data = np.full((intr.height, intr.width), class_id, dtype=np.uint8)
    return Frame(LabelMap(data, ignore_value), ValidityMask.full(intr.height, intr.width), intr)


def vertical_line_intensity(
    intr: Intrinsics,
    dist: Optional[DistortionCoeffs],
    rotation: np.ndarray,
    azimuths_rad: Sequence[float],
    half_width_px: float = 1.5,
) -> np.ndarray:
    """Render world-vertical lines (given rig azimuths) into a camera's raw image.

    Each line is the set of rig-frame points ``(rho sin a, y, rho cos a)``;
    its pinhole image is a straight line in the undistorted normalised plane.
    Pixels are shaded with a tent profile of the perpendicular distance to it,
    measured in undistorted pixels. Returns a float array in [0, 255].
    """
    vs, us = np.mgrid[0 : intr.height, 0 : intr.width].astype(np.float64)
    x, y = intr.to_normalised(us, vs)
    if dist is not None and not dist.is_zero():
        x, y = undistort(x, y, dist)
    px, py = x * intr.fx, y * intr.fy
    out = np.zeros(px.shape)
    for a in azimuths_rad:
        ends = []
        for yy in (-0.5, 0.5):
            p_cam = rotation.T @ np.array([math.sin(a), yy, math.cos(a)])
            if p_cam[2] <= 1e-6:
                break
            ends.append((p_cam[0] / p_cam[2] * intr.fx, p_cam[1] / p_cam[2] * intr.fy))
        if len(ends) < 2:
            continue
        (x0, y0), (x1, y1) = ends
        dx, dy = x1 - x0, y1 - y0
        dist_px = np.abs(dy * (px - x0) - dx * (py - y0)) / math.hypot(dx, dy)
        out = np.maximum(out, 255.0 * np.clip(1.0 - dist_px / half_width_px, 0.0, 1.0))
    return out


def vertical_line_frames(rig: Rig, azimuths_deg: Sequence[float], half_width_px: float = 1.5) -> list[RasterImage]:
    """Raw (still distorted) camera images of a scene made of world-vertical lines."""
    frames = []
    az = [math.radians(a) for a in azimuths_deg]
    for cam in rig.cameras:
        inten = vertical_line_intensity(cam.intrinsics, cam.distortion, rotation_from_extrinsics(cam.extrinsics), az, half_width_px)
        g = np.floor(inten + 0.5).astype(np.uint8)
        frames.append(RasterImage(np.repeat(g[..., None], 3, axis=2)))
    return frames


def column_trace(pano: np.ndarray, mask: np.ndarray, col_range: tuple[int, int], min_weight: float = 50.0):
    """Intensity-weighted column centroid per row inside ``col_range``; rows too faint are skipped."""
    lo, hi = col_range
    g = pano[..., 0].astype(np.float64) if pano.ndim == 3 else pano.astype(np.float64)
    g = np.where(mask, g, 0.0)[:, lo:hi]
    cols = np.arange(lo, hi, dtype=np.float64)
    w = g.sum(axis=1)
    keep = w >= min_weight
    centroids = (g[keep] * cols).sum(axis=1) / w[keep]
    return np.nonzero(keep)[0], centroids
