"""Exact four-point homographies and the side-camera skew augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .imgcore import InverseMap, LabelMap, RasterImage, ValidityMask, remap

PIVOT_EPS = 1e-12
DENOM_EPS = 1e-12
DET_EPS = 1e-12
ALPHA_RANGE = (10.0, 70.0)
_SQRT2 = math.sqrt(2.0)

Point = tuple[float, float]


class SingularSystemError(ValueError):
    """Correspondences are degenerate or the matrix cannot be inverted."""


class PointAtInfinityError(ValueError):
    pass


def _det3(m) -> float:
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map, stored with h33 = 1 whenever h33 is non-zero."""

    matrix: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3).tolist()
        object.__setattr__(self, "matrix", self._checked(rows))

    @staticmethod
    def _checked(rows) -> np.ndarray:
        h33 = rows[2][2]
        if abs(h33) > DENOM_EPS:
            rows = [[c / h33 for c in r] for r in rows]
        if abs(_det3(rows)) <= DET_EPS:
            raise SingularSystemError("homography is singular")
        m = np.array(rows)
        m.setflags(write=False)
        return m

    @classmethod
    def _from_rows(cls, rows) -> "Homography":
        # skips the array round-trip of __init__; rows must be 3 lists of 3 floats
        obj = object.__new__(cls)
        object.__setattr__(obj, "matrix", cls._checked(rows))
        return obj

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def __call__(self, p: Point) -> Point:
        return apply_homography_point(self, p)

    def inverse(self) -> "Homography":
        return invert_homography(self)


def _check_quad(pts: Sequence[Point], name: str) -> list[Point]:
    if len(pts) != 4:
        raise ValueError(f"{name} needs exactly 4 points")
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = pts
    x0, y0, x1, y1, x2, y2, x3, y3 = float(x0), float(y0), float(x1), float(y1), float(x2), float(y2), float(x3), float(y3)
    if not all(map(math.isfinite, (x0, y0, x1, y1, x2, y2, x3, y3))):
        raise ValueError(f"{name} contains non-finite coordinates")
    span = max(max(x0, x1, x2, x3) - min(x0, x1, x2, x3), max(y0, y1, y2, y3) - min(y0, y1, y2, y3))
    tol = 1e-12 * span * span
    # twice the signed area of each corner triangle (0,1,2), (0,1,3), (0,2,3), (1,2,3)
    ax, ay, bx, by, cx, cy = x1 - x0, y1 - y0, x2 - x0, y2 - y0, x3 - x0, y3 - y0
    crosses = (ax * by - ay * bx, ax * cy - ay * cx, bx * cy - by * cx, (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1))
    for tri, cross in zip(("0, 1, 2", "0, 1, 3", "0, 2, 3", "1, 2, 3"), crosses):
        if abs(cross) <= tol:
            raise SingularSystemError(f"{name}: points {tri} are collinear")
    return [(x0, y0), (x1, y1), (x2, y2), (x3, y3)]


def _normalise(pts: list[Point]):
    """Centre on the centroid and scale to mean distance sqrt(2)."""
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = pts
    cx = (x0 + x1 + x2 + x3) * 0.25
    cy = (y0 + y1 + y2 + y3) * 0.25
    hyp = math.hypot
    md = (hyp(x0 - cx, y0 - cy) + hyp(x1 - cx, y1 - cy) + hyp(x2 - cx, y2 - cy) + hyp(x3 - cx, y3 - cy)) * 0.25
    s = _SQRT2 / md
    return [((x0 - cx) * s, (y0 - cy) * s), ((x1 - cx) * s, (y1 - cy) * s), ((x2 - cx) * s, (y2 - cy) * s), ((x3 - cx) * s, (y3 - cy) * s)], cx, cy, s


def _solve_normalised(src: list[Point], dst: list[Point]) -> list[float]:
    """Eliminate the 8x8 correspondence system with h33 = 1, block by block.

    Unknowns split into the affine rows a = (h11, h12, h13), b = (h21, h22, h23)
    and the projective pair c = (h31, h32). With w_i = 1 + c . (u_i, v_i), every
    correspondence gives a . p_i = u'_i w_i and b . p_i = v'_i w_i, p_i = (u_i, v_i, 1).
    Eliminating a and b with the first three points leaves a 2x2 system in c.
    """
    (u0, v0), (u1, v1), (u2, v2), (u3, v3) = src
    # inverse of P = [p0; p1; p2] by cofactors
    c00, c01, c02 = v1 - v2, v2 - v0, v0 - v1
    c10, c11, c12 = u2 - u1, u0 - u2, u1 - u0
    c20, c21, c22 = u1 * v2 - u2 * v1, u2 * v0 - u0 * v2, u0 * v1 - u1 * v0
    det = c20 + c21 + c22
    if abs(det) < PIVOT_EPS:
        raise SingularSystemError("pivot below threshold")
    inv = 1.0 / det
    # P^-1 = [[c00, c01, c02], [c10, c11, c12], [c20, c21, c22]] * inv
    # weights l with p3 = sum l_i p_i
    l0 = (c00 * u3 + c10 * v3 + c20) * inv
    l1 = (c01 * u3 + c11 * v3 + c21) * inv
    l2 = (c02 * u3 + c12 * v3 + c22) * inv
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = dst
    # two equations in c = (g, h): coefficients (a, b) and right-hand side r
    t0, t1, t2 = x0 * l0, x1 * l1, x2 * l2
    a0 = t0 * u0 + t1 * u1 + t2 * u2 - x3 * u3
    b0 = t0 * v0 + t1 * v1 + t2 * v2 - x3 * v3
    r0 = x3 - t0 - t1 - t2
    t0, t1, t2 = y0 * l0, y1 * l1, y2 * l2
    a1 = t0 * u0 + t1 * u1 + t2 * u2 - y3 * u3
    b1 = t0 * v0 + t1 * v1 + t2 * v2 - y3 * v3
    r1 = y3 - t0 - t1 - t2
    # 2x2 with partial pivoting
    if abs(a1) > abs(a0):
        a0, b0, r0, a1, b1, r1 = a1, b1, r1, a0, b0, r0
    if abs(a0) < PIVOT_EPS:
        raise SingularSystemError("pivot below threshold")
    f = a1 / a0
    b1 -= f * b0
    r1 -= f * r0
    if abs(b1) < PIVOT_EPS:
        raise SingularSystemError("pivot below threshold")
    h = r1 / b1
    g = (r0 - b0 * h) / a0
    w0, w1, w2 = 1.0 + g * u0 + h * v0, 1.0 + g * u1 + h * v1, 1.0 + g * u2 + h * v2
    p0, p1, p2 = x0 * w0, x1 * w1, x2 * w2
    q0, q1, q2 = y0 * w0, y1 * w1, y2 * w2
    return [
        (c00 * p0 + c01 * p1 + c02 * p2) * inv,
        (c10 * p0 + c11 * p1 + c12 * p2) * inv,
        (c20 * p0 + c21 * p1 + c22 * p2) * inv,
        (c00 * q0 + c01 * q1 + c02 * q2) * inv,
        (c10 * q0 + c11 * q1 + c12 * q2) * inv,
        (c20 * q0 + c21 * q1 + c22 * q2) * inv,
        g,
        h,
    ]


def solve_homography(src: Sequence[Point], dst: Sequence[Point]) -> Homography:
    """Homography mapping each ``src[i]`` onto ``dst[i]`` (four correspondences).

    Coordinates are centred and scaled before the solve so that pixel-sized
    inputs stay well conditioned; the result is mapped back afterwards.
    """
    src, scx, scy, ss = _normalise(_check_quad(src, "src"))
    dst, dcx, dcy, ds = _normalise(_check_quad(dst, "dst"))
    a1, a2, a3, b1, b2, b3, g, h = _solve_normalised(src, dst)
    # undo the normalisation: H = T_dst^-1 . Hn . T_src
    g, h = g * ss, h * ss
    c = 1.0 - g * scx - h * scy
    a1, a2 = a1 * ss, a2 * ss
    a3 -= a1 * scx + a2 * scy
    b1, b2 = b1 * ss, b2 * ss
    b3 -= b1 * scx + b2 * scy
    r2 = [g, h, c]
    r0 = [a1 / ds + dcx * g, a2 / ds + dcx * h, a3 / ds + dcx * c]
    r1 = [b1 / ds + dcy * g, b2 / ds + dcy * h, b3 / ds + dcy * c]
    return Homography._from_rows([r0, r1, r2])


def invert_homography(H: Homography) -> Homography:
    m = H.matrix
    det = np.linalg.det(m)
    if abs(det) <= DET_EPS:
        raise SingularSystemError("homography is singular")
    adj = np.array(
        [
            [m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1], m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2], m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]],
            [m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2], m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0], m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]],
            [m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0], m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1], m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]],
        ]
    )
    return Homography(adj / det)


def apply_homography_point(H: Homography, p: Point) -> Point:
    m = H.matrix
    u, v = float(p[0]), float(p[1])
    d = m[2, 0] * u + m[2, 1] * v + m[2, 2]
    if abs(d) < DENOM_EPS:
        raise PointAtInfinityError(f"{p} maps to infinity")
    return (
        float((m[0, 0] * u + m[0, 1] * v + m[0, 2]) / d),
        float((m[1, 0] * u + m[1, 1] * v + m[1, 2]) / d),
    )


def apply_homography_points(H: Homography, xs, ys):
    """Vectorised projection; points sent to infinity come back as NaN."""
    m = H.matrix
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    d = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    bad = np.abs(d) < DENOM_EPS
    d = np.where(bad, 1.0, d)
    px = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / d
    py = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / d
    return np.where(bad, np.nan, px), np.where(bad, np.nan, py)


# ---------------------------------------------------------------------------
# skew augmentation


@dataclass(frozen=True)
class SkewSpec:
    side: str
    alpha_deg: float
    width: int
    height: int

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        lo, hi = ALPHA_RANGE
        if not lo <= self.alpha_deg <= hi:
            raise ValueError(f"alpha_deg must lie in [{lo}, {hi}], got {self.alpha_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError("skew needs a non-empty image")


def skew_displacement(alpha_deg: float, width: int) -> float:
    """Vertical corner shift for skew angle alpha measured across the image width."""
    return width * math.tan(math.radians(alpha_deg))


def skew_corners(side: str, alpha_deg: float, width: int, height: int):
    """Corner correspondences ``(src, dst)`` for a skew of any angle (no range check)."""
    w1, h1 = float(width - 1), float(height - 1)
    src = [(0.0, 0.0), (w1, 0.0), (w1, h1), (0.0, h1)]
    d = skew_displacement(alpha_deg, width)
    if side == "left":
        dst = [(0.0, -d), src[1], src[2], (0.0, h1 + d)]
    elif side == "right":
        dst = [src[0], (w1, -d), (w1, h1 + d), src[3]]
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return src, dst


def build_skew_quad(spec: SkewSpec):
    return skew_corners(spec.side, spec.alpha_deg, spec.width, spec.height)


def warp_perspective(
    img: RasterImage, labels: Optional[LabelMap], H: Homography
) -> tuple[RasterImage, Optional[LabelMap], ValidityMask]:
    """Render ``img`` (and ``labels``) through ``H`` onto a canvas of the same size.

    Every destination pixel is pulled from ``H^-1(p)``; labels share the exact
    same map but are sampled nearest-neighbour.
    """
    if labels is not None and labels.shape != img.shape:
        raise ValueError("labels and image dimensions differ")
    hinv = invert_homography(H)
    ys, xs = np.mgrid[0 : img.height, 0 : img.width].astype(np.float64)
    sx, sy = apply_homography_points(hinv, xs, ys)
    imap = InverseMap(sx, sy)
    out, mask = remap(img, imap)
    out_labels = remap(labels, imap)[0] if labels is not None else None
    return out, out_labels, mask


def skew_warp(img: RasterImage, labels: Optional[LabelMap], spec: SkewSpec):
    """Stretch one vertical edge to mimic a side-facing camera.

    Returns ``(image, labels, mask)``; ``labels`` is None when none were given.
    """
    if (spec.width, spec.height) != (img.width, img.height):
        raise ValueError("skew spec dimensions do not match the image")
    H = solve_homography(*build_skew_quad(spec))
    return warp_perspective(img, labels, H)
