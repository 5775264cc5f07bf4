"""Command-line interface.

Subcommands cover the whole pipeline:

    fracdet synth   --out DIR [--config C] [--seed N]
    fracdet augment --manifest M [--config C] [--seed N]
    fracdet train   --manifest M --out DIR [--config C] [--seed N]
    fracdet detect  --checkpoint CKPT --image IMG --out FILE [--config C]
    fracdet eval    --checkpoint CKPT --manifest M --out DIR [--config C]
    fracdet render  --checkpoint CKPT --image IMG --out FILE [--config C]

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 violated internal invariant (e.g. non-finite gradients).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, FracdetError
from .pipeline import (
    run_augment,
    run_detect,
    run_eval,
    run_render,
    run_synth,
    run_train,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; we reserve 2 for data problems."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fracdet",
                     description="Small-data lesion detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True, out_help="output directory"):
        p.add_argument("--config", help="JSON config file (defaults used if omitted)")
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--out", required=out_required, help=out_help)
        p.add_argument("--verbose", action="store_true", help="log progress")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    common(p)

    p = sub.add_parser("augment", help="expand a dataset per the config's menu")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    common(p, out_required=False)

    p = sub.add_parser("train", help="train a detector on the train split")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    common(p)

    p = sub.add_parser("detect", help="run detection on one image")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--image", required=True, help="input image")
    common(p, out_help="output detections JSON file")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--split", default="test", choices=("train", "test"))
    common(p)

    p = sub.add_parser("render", help="draw detections onto an image")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--image", required=True, help="input image")
    common(p, out_help="output image file")
    return parser


def _config(args) -> PipelineConfig:
    if args.config is None:
        return PipelineConfig()
    return load_config(args.config)


def _dispatch(args) -> int:
    cfg = _config(args)
    if args.command == "synth":
        manifest = run_synth(cfg, args.seed, args.out)
        print(f"wrote {len(manifest.entries)} images to {args.out}")
    elif args.command == "augment":
        plan, expanded, path = run_augment(cfg, args.manifest, args.seed)
        print(f"wrote {len(plan.variants)} variants; manifest: {path}")
    elif args.command == "train":
        _, history, ckpt = run_train(cfg, args.manifest, args.seed, args.out)
        print(f"trained {len(history)} epochs; final loss "
              f"{history[-1]['total']:.4f}; checkpoint: {ckpt}")
    elif args.command == "detect":
        record = run_detect(cfg, args.checkpoint, args.image, args.out)
        print(f"{len(record['detections'])} detections -> {args.out}")
    elif args.command == "eval":
        report = run_eval(cfg, args.checkpoint, args.manifest, args.seed,
                          args.out, split=args.split)
        mean_ap = "n/a" if report.mean_ap is None else f"{report.mean_ap:.4f}"
        acc = "n/a" if report.accuracy is None else f"{report.accuracy:.4f}"
        print(f"mAP {mean_ap}, image accuracy {acc} -> {args.out}")
    elif args.command == "render":
        detections = run_render(cfg, args.checkpoint, args.image, args.out)
        print(f"rendered {len(detections)} detections -> {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FracdetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
