"""Command-line entry point.

Subcommands: synth, parse, train, eval, infer, ablate.
Exit codes: 0 success, 2 invalid arguments, 3 io failure, 4 numeric failure.
"""

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .config import ABLATION_VARIANTS, RunConfig
from .data import DatasetManifest, make_synthetic_pair
from .degrade import DEGRADATIONS, procedural_clean
from .errors import InvalidArgumentError, NumericError
from .imgio import load_image, save_image
from .model import restore
from .parsers import parser_cache_path, stub_parse
from .training import (ablation_table, build_variant_model, evaluate_model,
                       run_ablation, train)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _load_run_config(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(getattr(args, "override", None) or [])
    if overrides:
        config = config.apply_overrides(overrides)
    if getattr(args, "seed", None) is not None:
        config.train.seed = args.seed
    if getattr(args, "out", None):
        config.out_dir = args.out
    return config


def _cache_dir(args, config=None):
    """--cache flag beats PPT_CACHE_DIR beats the config's cache path."""
    if getattr(args, "cache", None):
        return args.cache
    env = os.environ.get("PPT_CACHE_DIR")
    if env:
        return env
    return config.data.parser_cache if config else ""


def _load_dataset(manifest_path, config, cache_dir, split):
    manifest = DatasetManifest.load(manifest_path, split=split)
    return manifest.load_all(
        n_segments=config.data.n_segments, stub_seed=config.data.stub_seed,
        allow_stub=config.data.allow_stub, cache_dir=cache_dir or None,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    out_dir = args.out
    size = (args.size, args.size)
    for sub in ("clean", "degraded", "parser"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    rng = np.random.default_rng(args.seed)
    manifest = DatasetManifest(root=out_dir, split=args.split)
    for i in range(args.n_images):
        clean = procedural_clean(rng, size)
        pair_seed = int(rng.integers(0, 2**31 - 1))
        sample = make_synthetic_pair(clean, args.degradation, pair_seed,
                                     n_segments=args.n_segments)
        name = f"{i:04d}.png"
        save_image(os.path.join(out_dir, "clean", name), sample.clean)
        save_image(os.path.join(out_dir, "degraded", name), sample.degraded)
        save_image(os.path.join(out_dir, "parser", name), sample.parser)
        manifest.add(f"degraded/{name}", f"clean/{name}", f"parser/{name}")
    manifest_path = os.path.join(out_dir, "manifest.csv")
    manifest.save(manifest_path)
    print(f"wrote {args.n_images} samples and {manifest_path}")
    return EXIT_OK


def cmd_parse(args):
    manifest = DatasetManifest.load(args.manifest, split=args.split)
    cache_dir = _cache_dir(args) or os.path.join(manifest.root, "parser_cache")
    written = skipped = 0
    for degraded_rel, _, parser_rel in manifest.rows:
        if parser_rel:  # precomputed map: passed through untouched
            skipped += 1
            continue
        target = parser_cache_path(cache_dir, manifest.split, manifest.path(degraded_rel))
        if os.path.isfile(target):  # idempotent: never rewrite
            skipped += 1
            continue
        degraded = load_image(manifest.path(degraded_rel))
        parser = stub_parse(degraded, n_segments=args.n_segments, seed=args.seed)
        os.makedirs(os.path.dirname(target), exist_ok=True)
        save_image(target, parser)
        written += 1
    print(f"parser cache {cache_dir}: {written} written, {skipped} already present")
    return EXIT_OK


def cmd_train(args):
    config = _load_run_config(args)
    if not config.data.train_manifest:
        raise InvalidArgumentError("config.data.train_manifest is required for train")
    cache_dir = _cache_dir(args, config)
    dataset = _load_dataset(config.data.train_manifest, config, cache_dir, "train")

    os.makedirs(config.out_dir, exist_ok=True)
    config.save(os.path.join(config.out_dir, "config.yaml"))  # effective-config archive

    model = build_variant_model(config.model, config.train.ablation,
                                seed=config.train.seed)
    state = train(config.train, dataset, model, out_dir=config.out_dir,
                  resume_from=args.resume, log_stream=sys.stdout)

    report = evaluate_model(model, dataset, config.train.ablation, config.metric_mode)
    report.save_csv(os.path.join(config.out_dir, "train_metrics.csv"))
    print(f"final step {state.step}: train {report.format_summary()}")

    if config.data.val_manifest:
        val = _load_dataset(config.data.val_manifest, config, cache_dir, "val")
        val_report = evaluate_model(model, val, config.train.ablation, config.metric_mode)
        val_report.save_csv(os.path.join(config.out_dir, "val_metrics.csv"))
        print(f"val {val_report.format_summary()}")
    return EXIT_OK


def _model_from_checkpoint(prefix, run_config=None):
    manifest = ckpt.load_manifest(prefix)
    if run_config is not None:
        ckpt.check_architecture(manifest, run_config.model)
    model_config, _ = ckpt.configs_from_manifest(manifest)
    model = build_variant_model(model_config, manifest["variant"])
    ckpt.load_checkpoint(prefix, model)
    model.eval()
    return model, manifest


def cmd_eval(args):
    config = _load_run_config(args)
    model, manifest = _model_from_checkpoint(args.checkpoint,
                                             config if args.config else None)
    manifest_path = args.manifest or config.data.val_manifest
    if not manifest_path:
        raise InvalidArgumentError("provide --manifest or config.data.val_manifest")
    cache_dir = _cache_dir(args, config)
    dataset = _load_dataset(manifest_path, config, cache_dir, "val")
    report = evaluate_model(model, dataset, manifest["variant"], config.metric_mode)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.save_csv(os.path.join(args.out, "eval_metrics.csv"))
    print(report.format_summary())
    return EXIT_OK


def cmd_infer(args):
    model, manifest = _model_from_checkpoint(args.checkpoint)
    image = load_image(args.image)
    if args.parser:
        parser = load_image(args.parser)
    elif manifest["variant"] == "degraded_as_parser":
        parser = image
    else:
        parser = stub_parse(image, n_segments=args.n_segments, seed=args.seed or 0)
    if not model.use_parser:
        parser = None
    restored = restore(model, image, parser)

    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    out_path = os.path.join(out_dir, f"{stem}_restored.png")
    save_image(out_path, restored)
    print(f"wrote {out_path}")

    if args.figure:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(8, 4))
        for ax, (title, im) in zip(axes, [("input", image), ("restored", restored)]):
            ax.imshow(np.clip(im, 0, 1))
            ax.set_title(title)
            ax.axis("off")
        fig.tight_layout()
        fig_path = os.path.join(out_dir, f"{stem}_comparison.png")
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        print(f"wrote {fig_path}")
    return EXIT_OK


def cmd_ablate(args):
    config = _load_run_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise InvalidArgumentError("no ablation variants given")
    if not config.data.train_manifest or not config.data.val_manifest:
        raise InvalidArgumentError("ablate needs config.data.train_manifest and val_manifest")
    cache_dir = _cache_dir(args, config)
    dataset = _load_dataset(config.data.train_manifest, config, cache_dir, "train")
    val = _load_dataset(config.data.val_manifest, config, cache_dir, "val")

    os.makedirs(config.out_dir, exist_ok=True)
    config.save(os.path.join(config.out_dir, "config.yaml"))
    rows = run_ablation(variants, config.train, config.model, dataset, val,
                        out_dir=config.out_dir, metric_mode=config.metric_mode,
                        log_stream=sys.stdout)

    table = ablation_table(rows)
    table_path = os.path.join(config.out_dir, "ablation.csv")
    with open(table_path, "w") as fh:
        fh.write(table)
    print(table)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(1.5 * len(rows) + 2, 4))
    ax.bar([r["variant"] for r in rows], [r["ssim"] for r in rows], color="#4878cf")
    ax.set_ylabel("SSIM")
    ax.set_title(f"validation SSIM per variant (seed {rows[0]['seed']})")
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    chart_path = os.path.join(config.out_dir, "ablation.png")
    fig.savefig(chart_path, dpi=120)
    plt.close(fig)
    print(f"wrote {table_path} and {chart_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="dotted config override, repeatable (e.g. train.seed=3)")
    p.add_argument("--seed", type=int, help="shortcut for train.seed")
    p.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="pptformer",
                                     description="parser-prompted image restoration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic degradation dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, default=8)
    p.add_argument("--degradation", choices=DEGRADATIONS, default="low_light")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--n-segments", type=int, default=6)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("parse", help="populate the parser cache for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", help="cache root (default: PPT_CACHE_DIR or <root>/parser_cache)")
    p.add_argument("--n-segments", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--cache", help="parser cache root")
    p.add_argument("--resume", help="checkpoint prefix to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint prefix (no extension)")
    p.add_argument("--manifest", help="overrides config.data.val_manifest")
    p.add_argument("--cache", help="parser cache root")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="restore a single image")
    p.add_argument("--checkpoint", required=True, help="checkpoint prefix (no extension)")
    p.add_argument("--image", required=True)
    p.add_argument("--parser", help="precomputed parser map (default: stub parser)")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-segments", type=int, default=6)
    p.add_argument("--figure", action="store_true",
                   help="also write a side-by-side comparison figure")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    _add_config_flags(p)
    p.add_argument("--cache", help="parser cache root")
    p.add_argument("--variants", default=",".join(ABLATION_VARIANTS[:3]),
                   help="comma-separated variant names")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidArgumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, PermissionError, OSError) as e:
        print(f"io failure: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
