"""Cylindrical reprojection of a calibrated camera rig and deposit compositing.

Rig frame: x right, y down, z forward; the cylinder axis is the rig's
vertical (y). A panorama pixel ``(u, v)`` looks along azimuth
``theta = theta_min + u / s`` at cylinder height ``h = h_min + v / s``,
i.e. along the ray ``(sin theta, h, cos theta)``. World-vertical lines lie in
planes containing the y axis, so they map to single panorama columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Optional, Union

import numpy as np
import yaml

from .camera import DistortionCoeffs, Intrinsics, distort, undistort
from .imgcore import (
    LabelMap,
    RasterImage,
    ValidityMask,
    corner_indices,
    bilinear_sample_array,
    inside,
    nearest_indices,
)

BEHIND_EPS = 1e-6
FRUSTUM_SEGMENTS = 64


class FrameMismatchError(ValueError):
    """Frames supplied do not line up with the rig's cameras."""


@dataclass(frozen=True)
class Extrinsics:
    """Camera orientation in degrees: yaw (+ right), pitch (+ down), roll (about the optical axis)."""

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            v = getattr(self, name)
            if not -180.0 < v <= 180.0:
                raise ValueError(f"{name} must lie in (-180, 180], got {v}")


def rotation_from_extrinsics(e: Extrinsics) -> np.ndarray:
    """Camera-to-rig rotation ``R = R_yaw @ R_pitch @ R_roll``."""
    cy, sy = math.cos(math.radians(e.yaw)), math.sin(math.radians(e.yaw))
    cp, sp = math.cos(math.radians(e.pitch)), math.sin(math.radians(e.pitch))
    cr, sr = math.cos(math.radians(e.roll)), math.sin(math.radians(e.roll))
    r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    # positive pitch tips the optical axis toward +y (down)
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
    r_roll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return r_yaw @ r_pitch @ r_roll


@dataclass(frozen=True)
class RigCamera:
    id: str
    intrinsics: Intrinsics
    distortion: DistortionCoeffs
    extrinsics: Extrinsics

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_extrinsics(self.extrinsics)


@dataclass(frozen=True)
class Rig:
    cameras: tuple[RigCamera, ...]
    pixels_per_radian: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.cameras:
            raise ValueError("a rig needs at least one camera")
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate camera ids in rig: {ids}")

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.cameras]

    def camera(self, cam_id: str) -> RigCamera:
        for c in self.cameras:
            if c.id == cam_id:
                return c
        raise KeyError(f"no camera {cam_id!r} in rig (have {self.ids})")

    def front(self) -> RigCamera:
        """Camera named 'front', else the one with the smallest |yaw|."""
        for c in self.cameras:
            if c.id == "front":
                return c
        return min(self.cameras, key=lambda c: abs(c.extrinsics.yaw))


_CAMERA_KEYS = ("id", "fx", "fy", "cx", "cy", "width", "height", "k1", "k2", "k3", "p1", "p2", "yaw_deg", "pitch_deg", "roll_deg")


def rig_from_dict(doc: Mapping) -> Rig:
    cams = []
    for i, entry in enumerate(doc.get("cameras") or []):
        missing = [k for k in _CAMERA_KEYS if k not in entry]
        if missing:
            raise ValueError(f"cameras[{i}] is missing keys: {missing}")
        cams.append(
            RigCamera(
                id=str(entry["id"]),
                intrinsics=Intrinsics(
                    float(entry["fx"]), float(entry["fy"]), float(entry["cx"]), float(entry["cy"]),
                    int(entry["width"]), int(entry["height"]),
                ),
                distortion=DistortionCoeffs(*(float(entry[k]) for k in ("k1", "k2", "k3", "p1", "p2"))),
                extrinsics=Extrinsics(float(entry["yaw_deg"]), float(entry["pitch_deg"]), float(entry["roll_deg"])),
            )
        )
    pano = doc.get("panorama") or {}
    ppr = pano.get("pixels_per_radian")
    return Rig(tuple(cams), None if ppr is None else float(ppr))


def rig_to_dict(rig: Rig) -> dict:
    cams = []
    for c in rig.cameras:
        i, d, e = c.intrinsics, c.distortion, c.extrinsics
        cams.append(
            {
                "id": c.id, "fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
                "width": i.width, "height": i.height,
                "k1": d.k1, "k2": d.k2, "k3": d.k3, "p1": d.p1, "p2": d.p2,
                "yaw_deg": e.yaw, "pitch_deg": e.pitch, "roll_deg": e.roll,
            }
        )
    doc = {"cameras": cams}
    if rig.pixels_per_radian is not None:
        doc["panorama"] = {"pixels_per_radian": rig.pixels_per_radian}
    return doc


def load_rig(path) -> Rig:
    with open(path, encoding="utf-8") as fh:
        return rig_from_dict(yaml.safe_load(fh) or {})


def save_rig(rig: Rig, path) -> None:
    Path(path).write_text(yaml.safe_dump(rig_to_dict(rig), sort_keys=False), encoding="utf-8")


# ---------------------------------------------------------------------------
# canvas geometry


@dataclass(frozen=True)
class PanoramaCanvas:
    pixels_per_radian: float
    theta_min: float
    theta_max: float
    h_min: float
    h_max: float
    width: int = field(init=False)
    height: int = field(init=False)

    def __post_init__(self):
        s = self.pixels_per_radian
        if not s > 0:
            raise ValueError("pixels_per_radian must be positive")
        if not (self.theta_max > self.theta_min and self.h_max > self.h_min):
            raise ValueError("empty panorama range")
        # last pixel centre stays within the range; columns * (1/s) covers it fully
        object.__setattr__(self, "width", int(math.floor(s * (self.theta_max - self.theta_min) + 1e-9)) + 1)
        object.__setattr__(self, "height", int(math.floor(s * (self.h_max - self.h_min) + 1e-9)) + 1)

    def theta(self, u):
        return self.theta_min + np.asarray(u, dtype=np.float64) / self.pixels_per_radian

    def column_of(self, theta):
        return (np.asarray(theta, dtype=np.float64) - self.theta_min) * self.pixels_per_radian


def panorama_pixel_to_ray(canvas: PanoramaCanvas, u, v) -> np.ndarray:
    """Unit ray(s) in the rig frame; output shape is ``broadcast(u, v).shape + (3,)``."""
    theta = canvas.theta(u)
    h = canvas.h_min + np.asarray(v, dtype=np.float64) / canvas.pixels_per_radian
    theta, h = np.broadcast_arrays(theta, h)
    ray = np.stack([np.sin(theta), h, np.cos(theta)], axis=-1)
    return ray / np.linalg.norm(ray, axis=-1, keepdims=True)


def project_rays(rays, intr: Intrinsics, dist: Optional[DistortionCoeffs], rotation: np.ndarray):
    """Vectorised rig-frame rays to camera pixels.

    Returns ``(u, v, in_front, z)`` where ``z`` is the ray's component along
    the optical axis (the cosine of the off-axis angle for unit rays).
    """
    cam = np.asarray(rays, dtype=np.float64) @ rotation  # R^T applied to row vectors
    x, y, z = cam[..., 0], cam[..., 1], cam[..., 2]
    front = z > BEHIND_EPS
    zs = np.where(front, z, 1.0)
    xn, yn = x / zs, y / zs
    if dist is not None and not dist.is_zero():
        xn, yn = distort(xn, yn, dist)
    u, v = intr.to_pixels(xn, yn)
    return np.where(front, u, np.nan), np.where(front, v, np.nan), front, z


def project_ray_to_camera(ray, intr: Intrinsics, dist: Optional[DistortionCoeffs], extr: Extrinsics):
    """Pixel ``(u, v)`` where ``ray`` hits the camera, or None if it points behind it."""
    ray = np.asarray(ray, dtype=np.float64)
    ray = ray / np.linalg.norm(ray)
    u, v, front, _ = project_rays(ray, intr, dist, rotation_from_extrinsics(extr))
    if not bool(front):
        return None
    return float(u), float(v)


def pixel_rays(intr: Intrinsics, dist: Optional[DistortionCoeffs], us, vs, rotation: np.ndarray) -> np.ndarray:
    """Back-project pixels into rig-frame unit rays (undistorting first when ``dist`` is set)."""
    x, y = intr.to_normalised(us, vs)
    if dist is not None and not dist.is_zero():
        x, y = undistort(x, y, dist)
    cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    cam /= np.linalg.norm(cam, axis=-1, keepdims=True)
    return cam @ rotation.T


# ---------------------------------------------------------------------------
# frames and stitching


@dataclass(frozen=True)
class Frame:
    """One camera's input raster with its validity mask.

    ``intrinsics`` describes the raster actually supplied (for an undistorted
    frame, the enlarged canvas). ``distortion`` is set only when the raster is
    still the raw lens image and must be sampled through the lens model.
    """

    raster: Union[RasterImage, LabelMap]
    mask: ValidityMask
    intrinsics: Intrinsics
    distortion: Optional[DistortionCoeffs] = None

    def __post_init__(self):
        if self.mask.shape != self.raster.shape:
            raise ValueError("mask and raster dimensions differ")
        if (self.intrinsics.width, self.intrinsics.height) != (self.raster.width, self.raster.height):
            raise ValueError("raster size does not match its intrinsics")


class Panorama(NamedTuple):
    raster: Union[RasterImage, LabelMap]
    mask: ValidityMask
    contributions: dict[str, ValidityMask]
    winners: np.ndarray  # camera index per pixel, -1 where nothing is visible


def _as_frame_list(rig: Rig, frames) -> list[Frame]:
    if isinstance(frames, Mapping):
        extra = set(frames) - set(rig.ids)
        missing = [i for i in rig.ids if i not in frames]
        if extra or missing:
            raise FrameMismatchError(f"frames do not match rig cameras: missing {missing}, unexpected {sorted(extra)}")
        return [frames[i] for i in rig.ids]
    frames = list(frames)
    if len(frames) != len(rig.cameras):
        raise FrameMismatchError(f"rig has {len(rig.cameras)} cameras but {len(frames)} frames were given")
    return frames


def build_canvas(rig: Rig, frames, pixels_per_radian: Optional[float] = None) -> PanoramaCanvas:
    """Canvas bounds from the union of every frame's frustum on the cylinder.

    ``frames`` may be :class:`Frame` objects or bare :class:`Intrinsics`
    (undistorted rasters assumed). The default resolution is the front
    camera's fx in pixels per radian, unless the rig overrides it.
    """
    thetas, hs = [], []
    for cam, fr in zip(rig.cameras, _as_frame_list(rig, frames)):
        intr = fr.intrinsics if isinstance(fr, Frame) else fr
        dist = fr.distortion if isinstance(fr, Frame) else None
        us, vs = _frame_border(intr)
        rays = pixel_rays(intr, dist, us, vs, cam.rotation)
        thetas.append(np.arctan2(rays[:, 0], rays[:, 2]))
        hs.append(rays[:, 1] / np.hypot(rays[:, 0], rays[:, 2]))
    theta = np.concatenate(thetas)
    h = np.concatenate(hs)
    s = pixels_per_radian or rig.pixels_per_radian or rig.front().intrinsics.fx
    return PanoramaCanvas(float(s), float(theta.min()), float(theta.max()), float(h.min()), float(h.max()))


def _frame_border(intr: Intrinsics):
    t = np.linspace(0.0, 1.0, FRUSTUM_SEGMENTS + 1)
    w1, h1 = intr.width - 1.0, intr.height - 1.0
    us = np.concatenate([t * w1, np.full_like(t, w1), t * w1, np.zeros_like(t)])
    vs = np.concatenate([np.zeros_like(t), t * h1, np.full_like(t, h1), t * h1])
    return us, vs


def _mask_support(mask: np.ndarray, us, vs) -> np.ndarray:
    """True where every pixel with non-zero bilinear weight at (u, v) is valid."""
    h, w = mask.shape
    ok = inside(us, vs, w, h)
    uq = np.where(ok, us, 0.0)
    vq = np.where(ok, vs, 0.0)
    x0, x1, fx = corner_indices(uq, w)
    y0, y1, fy = corner_indices(vq, h)
    need_x1 = fx > 0.0
    need_y1 = fy > 0.0
    good = mask[y0, x0].copy()
    good &= mask[y0, x1] | ~need_x1
    good &= mask[y1, x0] | ~need_y1
    good &= mask[y1, x1] | ~(need_x1 & need_y1)
    return ok & good


def _canvas_rays(canvas: PanoramaCanvas) -> np.ndarray:
    vs, us = np.mgrid[0 : canvas.height, 0 : canvas.width].astype(np.float64)
    return panorama_pixel_to_ray(canvas, us, vs)


def camera_visibility(rig: Rig, frames, canvas: PanoramaCanvas):
    """Per camera: source coordinates, visibility flags and on-axis cosine for every canvas pixel."""
    rays = _canvas_rays(canvas)
    out = []
    for cam, fr in zip(rig.cameras, _as_frame_list(rig, frames)):
        u, v, front, z = project_rays(rays, fr.intrinsics, fr.distortion, cam.rotation)
        visible = front & _mask_support(fr.mask.bits, u, v)
        out.append((u, v, visible, z))
    return out


def select_winners(visibility) -> np.ndarray:
    """Camera index with the smallest off-axis angle among visible ones; -1 if none.

    Exact ties go to the earlier camera in rig order.
    """
    score = np.stack([np.where(vis, z, -np.inf) for _, _, vis, z in visibility])
    winners = np.argmax(score, axis=0)
    any_vis = np.isfinite(score.max(axis=0))
    return np.where(any_vis, winners, -1)


def _composite(rig: Rig, frames: list[Frame], canvas: PanoramaCanvas, labels: bool) -> Panorama:
    vis = camera_visibility(rig, frames, canvas)
    winners = select_winners(vis)
    if labels:
        ignore = frames[0].raster.ignore_value
        out = np.full((canvas.height, canvas.width), ignore, dtype=np.uint8)
    else:
        out = np.zeros((canvas.height, canvas.width, 3), dtype=np.uint8)
    contributions = {}
    for k, (cam, fr, (u, v, _, _)) in enumerate(zip(rig.cameras, frames, vis)):
        sel = winners == k
        contributions[cam.id] = ValidityMask(sel)
        if not sel.any():
            continue
        if labels:
            ix, iy, _ = nearest_indices(u[sel], v[sel], fr.raster.width, fr.raster.height)
            out[sel] = fr.raster.data[iy, ix]
        else:
            vals, _ = bilinear_sample_array(fr.raster.data, u[sel], v[sel])
            out[sel] = vals
    mask = ValidityMask(winners >= 0)
    raster = LabelMap(out, ignore) if labels else RasterImage(out)
    return Panorama(raster, mask, contributions, winners)


def stitch(rig: Rig, frames, canvas: PanoramaCanvas) -> Panorama:
    """Deposit each canvas pixel from the single camera that sees it closest to its optical axis."""
    frames = _as_frame_list(rig, frames)
    if not all(isinstance(f.raster, RasterImage) for f in frames):
        raise TypeError("stitch expects RasterImage frames; use stitch_labels for label maps")
    return _composite(rig, frames, canvas, labels=False)


def stitch_labels(rig: Rig, frames, canvas: PanoramaCanvas) -> Panorama:
    """Same winner rule as :func:`stitch`, nearest-neighbour sampling, ignore fill."""
    frames = _as_frame_list(rig, frames)
    if not all(isinstance(f.raster, LabelMap) for f in frames):
        raise TypeError("stitch_labels expects LabelMap frames")
    ignores = {f.raster.ignore_value for f in frames}
    if len(ignores) != 1:
        raise ValueError("label frames disagree on the ignore value")
    return _composite(rig, frames, canvas, labels=True)


def valid_theta_span(pano_mask: ValidityMask, canvas: PanoramaCanvas) -> float:
    """Angular footprint (radians) of the columns holding at least one valid pixel."""
    cols = pano_mask.bits.any(axis=0)
    return float(cols.sum()) / canvas.pixels_per_radian
