"""Panoramic dataset augmentation: skew warps, photometric jitter, rig stitching and scoring."""

__version__ = "0.1.0"
