"""CLI: viewextract extract --mode {backbones,crops} --images DIR --labels FILE --out DIR"""

from __future__ import annotations

import argparse
import sys

from .errors import ExtractError
from .extract import DEFAULT_BACKBONES, ExtractionPlan, extract, read_image_list


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewextract")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="emit a multi-view feature container from images")
    p.add_argument("--mode", choices=("backbones", "crops"), required=True)
    p.add_argument("--images", required=True, help="root directory of the image files")
    p.add_argument("--labels", required=True, help="CSV lines: relative_path,class_id")
    p.add_argument("--out", required=True, help="container output directory")
    p.add_argument("--backbones", default=",".join(DEFAULT_BACKBONES),
                   help="comma-separated backbone names (backbones mode)")
    p.add_argument("--crop-backbone", default="resnet18")
    p.add_argument("--crop-frac", type=float, default=2.0 / 3.0)
    p.add_argument("--image-size", type=int, default=84)
    p.add_argument("--weights-dir", default=None,
                   help="directory of <backbone>.pt checkpoints; omit for seeded init")
    p.add_argument("--role", default="novel", choices=("base", "novel"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        plan = ExtractionPlan(
            mode=args.mode,
            images=read_image_list(args.labels),
            out_dir=args.out,
            backbones=tuple(b.strip() for b in args.backbones.split(",") if b.strip()),
            crop_backbone=args.crop_backbone,
            crop_frac=args.crop_frac,
            image_size=args.image_size,
            weights_dir=args.weights_dir,
            role=args.role,
        )
        manifest = extract(plan, args.images)
    except ExtractError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
