"""Command line entry points: degrade, train, infer, evaluate, ablate.

Every command is reproducible from its flags alone; anything stochastic
takes an explicit seed.
"""

from __future__ import annotations

import argparse
import sys

from .degradation import DegradationSpec, degrade_directory
from .inference import infer_directory, infer_path, load_sr_generator
from .metrics import evaluate_dir
from .training import TrainConfig, load_train_config, run_ablation, train


def _jpeg_q(value: str):
    if value == "off":
        return None
    return int(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="synthesize LR images from an HR directory")
    p.add_argument("hr_dir")
    p.add_argument("out_dir")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.0, help="noise std in 8-bit units")
    p.add_argument("--jpeg-q", type=_jpeg_q, default=None, help="JPEG quality 1..100, or 'off'")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the networks on paired directories")
    p.add_argument("--config", default=None, help="YAML file with TrainConfig keys")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--lr-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preset", choices=("eq3", "eq10"), default=None, help="loss preset")
    p.add_argument("--no-cycle", action="store_true", help="drop the cycle branch")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--tiny", action="store_true", help="small networks for desk-scale runs")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr-patch", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("infer", help="super-resolve a PNG file or directory")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ensemble", action="store_true", help="average the 8 flip/rotation passes")

    p = sub.add_parser("evaluate", help="score SR images against ground truth")
    p.add_argument("sr_dir")
    p.add_argument("hr_dir")
    p.add_argument("--csv", default=None, help="also write per-image rows to this path")

    p = sub.add_parser("ablate", help="train and compare no-cycle vs cyclic variants")
    p.add_argument("--config", default=None)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--lr-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preset", choices=("eq3", "eq10"), default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--tiny", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr-patch", type=int, default=None)

    return parser


def _config_from_args(args, require_cycle_default=True) -> TrainConfig:
    overrides = {
        "preset": args.preset,
        "total_iters": args.iters,
        "seed": args.seed,
    }
    if getattr(args, "batch_size", None) is not None:
        overrides["batch_size"] = args.batch_size
    if getattr(args, "lr_patch", None) is not None:
        overrides["lr_patch"] = args.lr_patch
    if args.tiny:
        overrides["tiny"] = True
    if getattr(args, "no_cycle", False):
        overrides["cyclic_path"] = False
    return load_train_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "degrade":
            spec = DegradationSpec(
                scale=args.scale,
                noise_sigma=args.sigma,
                jpeg_quality=args.jpeg_q,
                seed=args.seed,
            )
            rows = degrade_directory(args.hr_dir, args.out_dir, spec)
            print(f"wrote {len(rows)} LR images and manifest.csv to {args.out_dir}")

        elif args.command == "train":
            config = _config_from_args(args)
            final_path, csv_path = train(
                config, args.hr_dir, args.lr_dir, args.out_dir, resume=args.resume
            )
            print(f"final checkpoint: {final_path}")
            print(f"loss log: {csv_path}")

        elif args.command == "infer":
            import os

            model = load_sr_generator(args.checkpoint)
            if os.path.isdir(args.input):
                written = infer_directory(args.input, args.output, model, ensemble=args.ensemble)
                print(f"wrote {len(written)} images to {args.output}")
            else:
                infer_path(args.input, args.output, model, ensemble=args.ensemble)
                print(f"wrote {args.output}")

        elif args.command == "evaluate":
            report = evaluate_dir(args.sr_dir, args.hr_dir)
            print(report.format_table())
            if args.csv:
                report.to_csv(args.csv)

        elif args.command == "ablate":
            config = _config_from_args(args)
            report = run_ablation(config, args.hr_dir, args.lr_dir, args.out_dir, quiet=False)
            print(report.format_table())

    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
