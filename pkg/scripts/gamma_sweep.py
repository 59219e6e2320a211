"""Gamma augmentation sweep: sampled gamma statistics per sigma and a preview strip."""

import argparse
import math
import time

import numpy as np

from panoaug.imgcore import RasterImage, load_image
from panoaug.photoaug import GAMMA_UPPER, GammaPolicy, apply_gamma, sample_gamma
from panoaug.pipeline import make_preview


def truncated_moments(mu, sigma):
    # closed form for a normal truncated to (0, upper]
    a, b = (0.0 - mu) / sigma, (GAMMA_UPPER - mu) / sigma
    pdf = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)  # noqa: E731
    cdf = lambda t: 0.5 * (1 + math.erf(t / math.sqrt(2)))  # noqa: E731
    z = cdf(b) - cdf(a)
    mean = mu + sigma * (pdf(a) - pdf(b)) / z
    var = sigma**2 * (1 + (a * pdf(a) - b * pdf(b)) / z - ((pdf(a) - pdf(b)) / z) ** 2)
    return mean, var


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--image", help="RGB PNG for the preview strip; a gradient is used when omitted")
    ap.add_argument("--draws", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="gamma_sweep.png")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'sigma':>5s} {'mean':>8s} {'expect':>8s} {'var':>8s} {'expect':>8s} {'min':>9s} {'max':>6s}")
    t = time.perf_counter()
    for k in range(1, 11):
        sigma = k / 10
        g = sample_gamma(GammaPolicy(1.0, sigma), rng, args.draws)
        mean, var = truncated_moments(1.0, sigma)
        print(f"{sigma:5.1f} {g.mean():8.4f} {mean:8.4f} {g.var():8.4f} {var:8.4f} {g.min():9.2e} {g.max():6.3f}")
    print(f"sampling took {time.perf_counter() - t:.3f} s")

    if args.image:
        img = load_image(args.image)
    else:
        ramp = np.tile(np.linspace(0, 255, 256).astype(np.uint8), (64, 1))
        img = RasterImage(np.repeat(ramp[..., None], 3, axis=2))
    tiles = [apply_gamma(img, g) for g in (0.5, 0.75, 1.0, 1.5, 2.0, 2.5)]
    make_preview(tiles, args.out, 1)
    print(f"wrote {args.out} (gamma 0.5, 0.75, 1, 1.5, 2, 2.5 top to bottom)")


if __name__ == "__main__":
    main()
