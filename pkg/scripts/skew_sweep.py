"""Render the skew sweep (alpha 10..70 in steps of 10, both sides) for one image as a montage."""

import argparse
from pathlib import Path

import numpy as np

from panoaug.geomaug import SkewSpec, skew_displacement, skew_warp
from panoaug.imgcore import RasterImage, load_image
from panoaug.pipeline import make_preview


def checkerboard(width=640, height=360, cell=40):
    vs, us = np.mgrid[0:height, 0:width]
    board = ((us // cell + vs // cell) % 2).astype(np.uint8)
    rgb = np.stack([board * 200 + 30, (us * 255 // width).astype(np.uint8), (vs * 255 // height).astype(np.uint8)], axis=-1)
    return RasterImage(rgb.astype(np.uint8))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--image", help="RGB PNG; a synthetic checkerboard is used when omitted")
    ap.add_argument("--out", default="skew_sweep.png")
    ap.add_argument("--columns", type=int, default=4)
    args = ap.parse_args()

    img = load_image(args.image) if args.image else checkerboard()
    tiles = [img]
    for side in ("left", "right"):
        for alpha in range(10, 71, 10):
            out, _, mask = skew_warp(img, None, SkewSpec(side, float(alpha), img.width, img.height))
            print(f"{side:5s} alpha={alpha:2d}  d={skew_displacement(alpha, img.width):8.1f} px  coverage={mask.fraction():.3f}")
            tiles.append(out)
    make_preview(tiles, Path(args.out), args.columns)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
