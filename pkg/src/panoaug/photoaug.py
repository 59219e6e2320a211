"""Photometric augmentation (gamma) and the classic flip/crop/noise/blur set."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .imgcore import InverseMap, LabelMap, RasterImage, remap, round_half_up

GAMMA_UPPER = 3.0


@dataclass(frozen=True)
class GammaPolicy:
    """Gaussian over gamma, truncated to the half-open interval (0, 3]."""

    mu: float = 1.0
    sigma: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in [0, 1], got {self.sigma}")
        if not 0.0 < self.mu <= GAMMA_UPPER:
            raise ValueError(f"mu must lie in (0, {GAMMA_UPPER}], got {self.mu}")


@dataclass(frozen=True)
class ClassicAugSpec:
    flip_horizontal: bool = False
    crop_fraction: float = 1.0
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError("crop_fraction must lie in (0, 1]")
        for name in ("noise_sigma", "blur_sigma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")


# ---------------------------------------------------------------------------
# gamma


def gamma_lut(gamma: float) -> np.ndarray:
    """256-entry table for O = I ** (1 / gamma) on display-referred 8-bit values."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    k = np.arange(256, dtype=np.float64) / 255.0
    lut = round_half_up(255.0 * k ** (1.0 / gamma))
    return np.clip(lut, 0, 255).astype(np.uint8)


def apply_gamma(img: RasterImage, gamma: float) -> RasterImage:
    return RasterImage(gamma_lut(gamma)[img.data])


def sample_gamma(policy: GammaPolicy, rng: np.random.Generator, size: Optional[int] = None):
    """Draw gamma from N(mu, sigma^2) by rejection until it lands in (0, 3].

    With ``size`` given, returns that many draws; they equal ``size``
    consecutive scalar calls on a generator in the same state.
    """
    if policy.sigma == 0.0:
        return policy.mu if size is None else np.full(size, policy.mu)
    if size is None:
        while True:
            g = policy.mu + policy.sigma * rng.standard_normal()
            if 0.0 < g <= GAMMA_UPPER:
                return float(g)
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        # one batch covers the need with overwhelming probability (acceptance >= 0.5)
        z = policy.mu + policy.sigma * rng.standard_normal(2 * need + 16)
        ok = z[(z > 0.0) & (z <= GAMMA_UPPER)]
        take = ok[:need]
        out[filled : filled + take.size] = take
        filled += take.size
    return out


# ---------------------------------------------------------------------------
# classic set


def flip_horizontal(img: RasterImage, labels: Optional[LabelMap] = None):
    out = RasterImage(img.data[:, ::-1])
    if labels is None:
        return out, None
    if labels.shape != img.shape:
        raise ValueError("labels and image dimensions differ")
    return out, LabelMap(labels.data[:, ::-1], labels.ignore_value)


def _crop_axis(size: int, fraction: float):
    n = int(round_half_up(fraction * size))
    if n < 1:
        raise ValueError(f"crop fraction {fraction} leaves an empty window")
    start = (size - n) // 2
    if size == 1:
        return np.full(1, float(start))
    # stretch the window's pixel centres over the full output axis
    return start + np.arange(size) * ((n - 1) / (size - 1))


def center_crop(img: RasterImage, labels: Optional[LabelMap] = None, fraction: float = 1.0):
    """Cut the central ``fraction`` window and resize it back to the full canvas."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if labels is not None and labels.shape != img.shape:
        raise ValueError("labels and image dimensions differ")
    xs = _crop_axis(img.width, fraction)
    ys = _crop_axis(img.height, fraction)
    gx, gy = np.meshgrid(xs, ys)
    imap = InverseMap(gx, gy)
    out = remap(img, imap)[0]
    out_labels = remap(labels, imap)[0] if labels is not None else None
    return out, out_labels


def add_noise(img: RasterImage, sigma: float, rng: np.random.Generator) -> RasterImage:
    """Additive Gaussian noise, rounded per sample and clamped to 8 bits."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img
    noise = round_half_up(rng.normal(0.0, sigma, img.data.shape))
    return RasterImage(np.clip(img.data + noise, 0, 255).astype(np.uint8))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = kernel.size // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for i, wgt in enumerate(kernel):
        out += wgt * np.take(p, np.arange(i, i + n), axis=axis)
    return out


def blur(img: RasterImage, sigma: float) -> RasterImage:
    """Separable Gaussian blur, radius ceil(3 sigma), clamp-to-edge borders."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img
    k = gaussian_kernel(sigma)
    a = img.data.astype(np.float64)
    a = _convolve_axis(a, k, axis=1)
    a = _convolve_axis(a, k, axis=0)
    return RasterImage(np.clip(round_half_up(a), 0, 255).astype(np.uint8))
