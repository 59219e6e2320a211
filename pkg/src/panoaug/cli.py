"""Command-line entry point: ``panoaug {augment,undistort,stitch,evaluate,preview}``.

Exit codes: 0 success, 1 fatal error, 2 finished but some inputs were skipped.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .camera import DivergenceError
from .geomaug import PointAtInfinityError, SingularSystemError
from .imgcore import ImageIOError
from .panorama import FrameMismatchError
from .pipeline import (
    ConfigError,
    EmptyEvaluationError,
    load_manifest,
    load_policy,
    make_preview,
    run_augment,
    run_evaluate,
    run_stitch,
    run_undistort,
)
from .segeval import LabelRangeError, format_report, report_records

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

_FATAL = (
    OSError,
    ImageIOError,
    ConfigError,
    EmptyEvaluationError,
    FrameMismatchError,
    DivergenceError,
    SingularSystemError,
    PointAtInfinityError,
    LabelRangeError,
    KeyError,
    ValueError,
)


def _cmd_augment(a) -> int:
    manifest = load_manifest(a.manifest)
    policy = load_policy(a.policy, seed=a.seed)
    summary = run_augment(manifest, policy, a.out, workers=a.workers)
    print(f"records={summary.records} written={summary.written} skipped={len(summary.skipped)} log={summary.log_path}")
    return summary.exit_code


def _cmd_undistort(a) -> int:
    info = run_undistort(a.rig, a.camera, a.in_path, a.out, a.mask)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def _cmd_stitch(a) -> int:
    frames = {"left": a.left, "front": a.front, "right": a.right}
    labels = None
    if a.labels:
        named = [k for k, v in frames.items() if v is not None]
        if len(a.labels) != len(named):
            raise ConfigError(f"--labels needs {len(named)} paths, one per frame")
        labels = dict(zip(named, a.labels))
    info = run_stitch(a.rig, frames, a.out, labels)
    print(json.dumps(info, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_evaluate(a) -> int:
    rep = run_evaluate(a.gt, a.pred, a.classes, a.remap)
    names = rep.classes.names
    print(format_report(rep.metrics, names))
    for s in rep.skipped:
        print(f"skipped {s['name']}: {s['reason']}", file=sys.stderr)
    if a.report:
        doc = report_records(rep.metrics, names)
        doc["pairs"] = len(rep.pairs)
        doc["skipped"] = rep.skipped
        Path(a.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rep.exit_code


def _cmd_preview(a) -> int:
    out = make_preview(a.images, a.out, a.columns)
    print(f"{a.out}: {out.width}x{out.height}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panoaug", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("augment", help="expand a manifest with an augmentation policy")
    s.add_argument("--manifest", required=True)
    s.add_argument("--policy", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=_cmd_augment)

    s = sub.add_parser("undistort", help="full-frame undistortion of one camera image")
    s.add_argument("--rig", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--in", dest="in_path", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mask", required=True)
    s.set_defaults(func=_cmd_undistort)

    s = sub.add_parser("stitch", help="cylindrical panorama from a camera rig")
    s.add_argument("--rig", required=True)
    s.add_argument("--left")
    s.add_argument("--front")
    s.add_argument("--right")
    s.add_argument("--out", required=True, help="output prefix")
    s.add_argument("--labels", nargs="+", metavar="LABEL", help="label maps in left/front/right order")
    s.set_defaults(func=_cmd_stitch)

    s = sub.add_parser("evaluate", help="C / mIoU / G over matching label files")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--classes", required=True)
    s.add_argument("--remap")
    s.add_argument("--report")
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("preview", help="grid montage of images")
    s.add_argument("--out", required=True)
    s.add_argument("--columns", type=int, default=4)
    s.add_argument("images", nargs="+")
    s.set_defaults(func=_cmd_preview)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _FATAL as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
