"""``invfuse`` command line: train, fuse, eval and ablate."""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import resolve
from .data import ImagePair, load_manifest, load_pair, read_image, rgb_to_ycbcr, write_image
from .errors import (CheckpointVersionError, ConfigError, CropSizeError, DecodeError,
                     NumericsError, PairDimensionError, SizeError)
from .metrics import evaluate, format_table, mean_report
from .model import fuse, fuse_full
from .trainer import load_model, train

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICS = 0, 1, 2, 3, 4

log = logging.getLogger("invfuse")


class UsageError(Exception):
    pass


def _add_config_args(p):
    p.add_argument("--config", help="flat key=value config file (model./train./ablate. keys)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config value, e.g. train.learning_rate=5e-5")
    p.add_argument("--seed", type=int, help="shorthand for model.seed and train.seed")
    p.add_argument("--epochs", type=int, help="shorthand for train.epochs (ablate.epochs for ablate)")
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")


def build_parser():
    parser = argparse.ArgumentParser(prog="invfuse", description="MRI / functional image fusion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a fusion model from a manifest")
    _add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-resume", action="store_true", help="ignore an existing latest.ckpt")

    p = sub.add_parser("fuse", help="fuse one MRI / functional pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mri", required=True)
    p.add_argument("--functional", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="compute the eight fusion metrics over a manifest")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fused-dir", help="directory holding <identifier>.png fused images")
    src.add_argument("--checkpoint", help="fuse with this checkpoint before scoring")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="train and rank a grid of ablation variants")
    _add_config_args(p)
    p.add_argument("--grid", required=True,
                   help="preset (structural, loss, full, acceptance), a file or a comma list")
    p.add_argument("--manifest", required=True)
    p.add_argument("--eval-manifest", help="pairs to score on (defaults to --manifest)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int)
    return parser


def _resolved(args, command):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"model.seed={args.seed}", f"train.seed={args.seed}"]
    section = "ablate" if command == "ablate" else "train"
    if args.epochs is not None:
        overrides.append(f"{section}.epochs={args.epochs}")
    if args.max_steps is not None:
        overrides.append(f"{section}.max_steps={args.max_steps}")
    if command == "ablate" and args.workers is not None:
        overrides.append(f"ablate.workers={args.workers}")
    if command == "ablate" and args.eval_manifest is not None:
        overrides.append(f"ablate.eval_manifest={args.eval_manifest!r}")
    cfg = resolve(args.config, overrides)
    if command == "train":
        cfg = replace(cfg, train=replace(cfg.train, manifest_path=str(args.manifest)))
    return cfg


def _echo(cfg, extra=()):
    print("# resolved config")
    for line in cfg.lines():
        print(line)
    for line in extra:
        print(line)
    print(f"# seed {cfg.train.seed}")
    sys.stdout.flush()


def _manifest(path):
    if not Path(path).is_file():
        raise UsageError(f"manifest not found: {path}")
    pairs = load_manifest(path)
    if not pairs:
        raise UsageError(f"manifest is empty: {path}")
    return pairs


def cmd_train(args):
    cfg = _resolved(args, "train")
    _echo(cfg, [f"out_dir = {args.out_dir}"])
    pairs = _manifest(args.manifest)
    state = train(cfg.train, pairs, cfg.model, out_dir=args.out_dir, resume=not args.no_resume)
    print(f"trained {state.step} steps; final checkpoint {Path(args.out_dir) / 'final.ckpt'}")
    return EXIT_OK


def cmd_fuse(args):
    model = load_model(args.checkpoint)
    print("# resolved config")
    for key, value in model.config.to_dict().items():
        print(f"model.{key} = {value}")
    print(f"# seed {model.config.seed}")
    pair = load_pair(args.mri, args.functional)
    out = fuse_full(model, pair)
    write_image(args.out, out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _fused_from_dir(directory, pair):
    path = Path(directory) / f"{pair.identifier}.png"
    img = read_image(path)
    if img.ndim == 3:
        img = rgb_to_ycbcr(img[..., :3])[0]
    if img.shape != pair.shape:
        raise PairDimensionError(f"{path} is {img.shape}, sources are {pair.shape}")
    return img


def cmd_eval(args):
    print("# resolved config")
    print(f"eval.source = {args.fused_dir or args.checkpoint}")
    print(f"eval.manifest = {args.manifest}")
    model = None
    if args.checkpoint:
        model = load_model(args.checkpoint)
        for key, value in model.config.to_dict().items():
            print(f"model.{key} = {value}")
    print(f"# seed {model.config.seed if model is not None else 'n/a'}")
    pairs = _manifest(args.manifest)
    reports = []
    for pair in pairs:
        if model is not None:
            fused = fuse(model, pair.mri, pair.functional_y)
        else:
            fused = _fused_from_dir(args.fused_dir, pair)
        reports.append(evaluate(fused, pair.mri, pair.functional_y, pair.identifier))
    table = format_table(reports, mean_report(reports))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table, encoding="utf-8")
    print(f"wrote {len(reports)} rows plus mean to {out}")
    return EXIT_OK


def cmd_ablate(args):
    from .ablation import parse_grid, run_ablation

    cfg = _resolved(args, "ablate")
    variants = parse_grid(args.grid)
    _echo(cfg, ["ablate.grid = " + ",".join(v.name for v in variants)])
    train_pairs = _manifest(args.manifest)
    eval_pairs = _manifest(cfg.ablate.eval_manifest) if cfg.ablate.eval_manifest else train_pairs
    run_ablation(variants, train_pairs, eval_pairs, args.out_dir, cfg.model, cfg.train,
                 epochs=cfg.ablate.epochs, max_steps=cfg.ablate.max_steps,
                 workers=cfg.ablate.workers)
    print(f"wrote per-variant tables, means.tsv and ranks.tsv under {args.out_dir}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "fuse": cmd_fuse, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"invfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PairDimensionError, DecodeError, CropSizeError, SizeError,
            CheckpointVersionError, FileNotFoundError) as exc:
        print(f"invfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"invfuse: numerics error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except Exception as exc:  # noqa: BLE001 - last-resort nonzero exit
        print(f"invfuse: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
