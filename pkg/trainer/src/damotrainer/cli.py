"""Command-line interface.

Mirrors the OPC toolkit's CLI contract: each subcommand prints exactly one
machine-readable JSON line to stdout; errors print a JSON object to stderr
and exit 1; usage errors exit 2.

    damotrainer train-dls  --data cases/ --out run/ [--steps N] ...
    damotrainer train-damo --data cases/ --dls run/dls_checkpoint.pt --out run/
    damotrainer emit       --checkpoint run/damo_checkpoint.pt --data cases/ --out masks/
"""
from __future__ import annotations

import argparse
import json
import sys

from .losses import LossWeights
from .train import TrainConfig, emit_masks, train_damo, train_dls


def _add_train_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset root (case directories)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, default=None,
                   help="training steps (default: max-epochs worth)")
    p.add_argument("--resolution", type=int, default=TrainConfig.resolution)
    p.add_argument("--width-factor", type=float, default=TrainConfig.width_factor)
    p.add_argument("--batch", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--crop", type=int, default=TrainConfig.crop)
    p.add_argument("--seed", type=int, default=TrainConfig.seed)
    p.add_argument("--phi", choices=("auto", "random", "vgg19"),
                   default=TrainConfig.phi_kind,
                   help="perceptual feature extractor (default: pretrained "
                        "when available, random pyramid otherwise)")


def _config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(resolution=args.resolution, width_factor=args.width_factor,
                       batch_size=args.batch, lr=args.lr, crop=args.crop,
                       seed=args.seed, phi_kind=args.phi)


def cmd_train_dls(args: argparse.Namespace) -> dict:
    return train_dls(args.data, args.out, _config(args), steps=args.steps,
                     target_miou=args.target_miou)


def cmd_train_damo(args: argparse.Namespace) -> dict:
    weights = LossWeights(lambda0=args.lambda0, lambda1=args.lambda1,
                          lambda2=args.lambda2)
    return train_damo(args.data, args.dls, args.out, _config(args),
                      weights=weights, steps=args.steps)


def cmd_emit(args: argparse.Namespace) -> dict:
    written = emit_masks(args.checkpoint, args.data, args.out,
                         threshold=args.threshold)
    return {"kind": "emit", "masks": len(written), "out": args.out}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="damotrainer",
        description="Train learned litho-simulator / mask-generator models "
                    "over OPC dataset directories.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-dls", help="train the litho simulator")
    _add_train_opts(p)
    p.add_argument("--target-miou", type=float, default=None,
                   help="stop early when training-set mIoU exceeds this")
    p.set_defaults(func=cmd_train_dls)

    p = sub.add_parser("train-damo", help="train the mask generator")
    _add_train_opts(p)
    p.add_argument("--dls", required=True, help="frozen simulator checkpoint")
    p.add_argument("--lambda0", type=float, default=LossWeights.lambda0)
    p.add_argument("--lambda1", type=float, default=LossWeights.lambda1)
    p.add_argument("--lambda2", type=float, default=LossWeights.lambda2)
    p.set_defaults(func=cmd_train_damo)

    p = sub.add_parser("emit", help="emit <case-id>.mask.png per case")
    p.add_argument("--checkpoint", required=True, help="mask-generator checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_emit)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        payload = args.func(args)
    except Exception as exc:  # contract: one JSON error line, exit 1
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps(payload, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
