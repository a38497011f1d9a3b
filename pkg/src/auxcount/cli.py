"""Command-line harness: train / eval / predict / synth.

The compute device is selected by the AUXCOUNT_DEVICE environment variable
(default "cpu"); set AUXCOUNT_DEVICE=cuda to run on a GPU.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config, apply_overrides
from .data import load_manifest
from .evaluate import evaluate_model, predict
from .synthetic import make_synthetic, write_split_manifests
from .train import load_checkpoint, resolve_device, train

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    result = train(cfg, quiet=args.quiet)
    print(f"best checkpoint: {result.best_checkpoint}")
    print(f"last checkpoint: {result.last_checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    device = resolve_device()
    model, cfg, _ = load_checkpoint(args.ckpt, device)
    manifest_path = getattr(cfg.data, f"{args.split}_manifest", "")
    if not manifest_path:
        print(f"error: config in checkpoint has no manifest for split {args.split!r}", file=sys.stderr)
        return 2
    manifest = load_manifest(manifest_path, args.split)
    report = evaluate_model(model, manifest, cfg.data, device)
    print(report.table())
    out = Path(args.out) if args.out else Path(args.ckpt).parent / f"report_{args.split}.json"
    report.to_json(out)
    print(f"report written to {out}")
    return 0


def _cmd_predict(args) -> int:
    device = resolve_device()
    model, cfg, _ = load_checkpoint(args.ckpt, device)
    root = Path(args.images)
    if root.is_dir():
        paths = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    else:
        paths = [root]
    if not paths:
        print(f"error: no images found under {root}", file=sys.stderr)
        return 2
    results = predict(model, paths, args.out, device, cfg.data, panel=args.panel)
    for r in results:
        print(f"{r['image_id']}: count={r['count']:.2f}")
    return 0


def _cmd_synth(args) -> int:
    manifest = make_synthetic(
        n=args.n,
        count_range=(args.count_min, args.count_max),
        seed=args.seed,
        out_dir=args.out,
        size=args.size,
        distractors=not args.no_distractors,
    )
    print(f"wrote {len(manifest)} scenes under {args.out}")
    if args.splits:
        splits = {}
        for part in args.splits.split(","):
            name, _, size = part.partition("=")
            splits[name.strip()] = int(size)
        written = write_split_manifests(manifest, args.out, splits, seed=args.seed)
        for name, path in written.items():
            print(f"split {name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auxcount", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a YAML config")
    p.add_argument("--config", required=True, help="path to YAML run config")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. --set optim.lr=1e-3 (repeatable)",
    )
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a named split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--out", default=None, help="report path (default: next to the checkpoint)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="predict density maps and counts for images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True, help="image file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--panel", action="store_true", help="also write side-by-side panels")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--count-min", type=int, default=10)
    p.add_argument("--count-max", type=int, default=50)
    p.add_argument("--no-distractors", action="store_true")
    p.add_argument(
        "--splits",
        default="",
        help='also write split manifests, e.g. "train=48,val=16"',
    )
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
