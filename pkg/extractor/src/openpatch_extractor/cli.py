"""CLI bridging point-cloud datasets to the engine's OPBK files.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .backbones import BACKBONES
from .extract import extract, save_checkpoint
from .spec import ExtractionSpec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openpatch-extract",
        description="Extract intermediate-layer patch embeddings from 3D backbones.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-ckpt", help="write a freshly initialized checkpoint")
    p.add_argument("--backbone", choices=sorted(BACKBONES), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="embed a labeled point-cloud directory")
    p.add_argument("--backbone", choices=sorted(BACKBONES), required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--rotation-agg", default=None, help="epn only: max (default) or mean")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init-ckpt":
            save_checkpoint(args.backbone, args.out, args.seed)
            print(f"wrote {args.backbone} checkpoint to {args.out}")
        else:
            spec = ExtractionSpec(
                backbone=args.backbone,
                layer=args.layer,
                checkpoint=args.ckpt,
                rotation_aggregation=args.rotation_agg,
                points_per_cloud=args.points,
            )
            summary = extract(spec, args.data, args.out)
            print(
                f"wrote {summary['samples']} samples "
                f"(C={summary['channels']}, P={summary['patches_per_sample']}, "
                f"{summary['classes']} classes) to {args.out}"
            )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
