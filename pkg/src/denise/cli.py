"""Command-line entry point: ``denise <command> [options]``.

Every command accepts ``--config FILE`` (flat ``key=value`` lines using the
option names, e.g. ``learning_rate=1e-3``; command-line flags win) and
``--run-dir``.  Each run writes ``run.log`` into its run directory; that
file is itself a valid ``--config`` for repeating the run.

Exit codes: 0 success, 2 configuration error, 3 missing or invalid input,
4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .enhance import EnhanceConfig
from .errors import ConfigError, InputError
from .metrics import MetricsConfig, compare_runs, evaluate_dataset, load_report
from .pipeline import (
    PipelineConfig,
    enhance_split,
    predict_split,
    run_pipeline,
    train_on_split,
)
from .refmodels import TrainConfig, ingest_predictions, load_checkpoint, save_checkpoint
from .synth import SceneConfig, generate_dataset, load_manifest, save_manifest, split_dataset

log = logging.getLogger("denise")

RUN_ROOT_ENV = "DENISE_RUN_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3, 4
_META_KEYS = {"command", "config", "run_dir", "run_id", "verbose", "func"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios need three comma-separated values")
    return parts


def _add_scene_args(p):
    g = p.add_argument_group("synthetic scenes")
    g.add_argument("--n", dest="n_images", type=int, default=200)
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--occlusion-prob", type=float, default=0.3)
    g.add_argument("--occlusion-max-fraction", type=float, default=0.3)
    g.add_argument("--shadow-prob", type=float, default=0.5)
    g.add_argument("--noise-std", type=float, default=0.04)
    g.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))


def _add_train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=20)
    g.add_argument("--batch-size", type=int, default=8)
    g.add_argument("--learning-rate", "--lr", type=float, default=1e-4)
    g.add_argument("--patch-radius", type=int, default=2)


def _add_enhance_args(p):
    g = p.add_argument_group("enhancement")
    g.add_argument("--variant", choices=("seg", "edge"), default="seg")
    g.add_argument("--mode", choices=("merge3", "concat4"), default="merge3")
    g.add_argument("--threshold", type=float, default=0.5)
    g.add_argument("--clip-low", type=float, default=0.5)
    g.add_argument("--clip-high", type=float, default=1.0)
    g.add_argument("--dilation-radius", type=int, default=15)
    g.add_argument("--preprocess-channel4", action="store_true")


def _add_metric_args(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--biou-fraction", type=float, default=0.02)
    g.add_argument("--biou-pixels", type=int, default=None)
    g.add_argument("--eval-threshold", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="denise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", type=Path, help="key=value file with option defaults")
        p.add_argument("--run-dir", type=Path, help=f"defaults to ${RUN_ROOT_ENV}/<command>-<run-id>")
        p.add_argument("--run-id", default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = command("synth", cmd_synth, "generate and split a synthetic dataset")
    p.add_argument("--out", type=Path, help="dataset directory (default: <run-dir>/data)")
    _add_scene_args(p)

    p = command("train", cmd_train, "train a patch classifier on a manifest split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--out", type=Path, help="checkpoint path (default: <run-dir>/model.dnw)")
    _add_train_args(p)

    p = command("predict", cmd_predict, "write per-sample probability or edge maps")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", type=Path, help="classifier checkpoint")
    src.add_argument("--sobel", action="store_true", help="use Sobel edge maps")
    p.add_argument("--out", type=Path, help="prediction directory (default: <run-dir>/preds)")

    p = command("enhance", cmd_enhance, "enhance a dataset with first-stage predictions")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--split", default="all", choices=("train", "val", "test", "all"))
    p.add_argument("--out", type=Path, help="enhanced dataset directory (default: <run-dir>/enhanced)")
    _add_enhance_args(p)

    p = command("eval", cmd_eval, "score predictions against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, help="directory of ground-truth masks")
    p.add_argument("--manifest", type=Path, help="take truth masks from this manifest")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--label", default="")
    p.add_argument("--out", type=Path, help="report path (default: <run-dir>/report.txt)")
    _add_metric_args(p)

    p = command("compare", cmd_compare, "tabulate two metric reports")
    p.add_argument("--baseline", type=Path, required=True)
    p.add_argument("--enhanced", type=Path, required=True)
    p.add_argument("--model-name", default="model")
    p.add_argument("--baseline-method", default="Standalone")
    p.add_argument("--enhanced-method", default="DeNISE")
    p.add_argument("--out", type=Path, help="table path (default: <run-dir>/comparison.txt)")

    p = command("pipeline", cmd_pipeline, "baseline vs. enhanced two-stage run")
    p.add_argument("--manifest", type=Path, help="use an existing split dataset")
    p.add_argument("--stage1", default=None,
                   help="classifier | sobel | oracle | external:<dir> (default by variant)")
    p.add_argument("--baseline-only", action="store_true")
    _add_scene_args(p)
    _add_train_args(p)
    _add_enhance_args(p)
    _add_metric_args(p)
    return parser


# -- config files -------------------------------------------------------------

def read_config_file(path: Path) -> dict[str, str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: cannot read config ({exc.strerror or exc})") from None
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        if key in _META_KEYS:
            continue
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r}")
        if action.nargs == 0:  # store_true flags
            value = raw.lower() in ("1", "true", "yes", "on")
        elif raw == "None":
            value = None
        else:
            convert = action.type or str
            try:
                value = convert(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"config key {key!r}: {value!r} not in {action.choices}")
        action.required = False
        defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # Config values become subcommand defaults, so they must be loaded first.
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None:
        choices = parser._subparsers._group_actions[0].choices
        command = next((t for t in argv if t in choices), None)
        if command is not None:
            _apply_config(choices[command], read_config_file(known.config))
    return parser.parse_args(argv)


# -- helpers ------------------------------------------------------------------

def _run_dir(args) -> Path:
    if args.run_dir is not None:
        return args.run_dir
    run_id = args.run_id or time.strftime("%Y%m%d-%H%M%S")
    return Path(os.environ.get(RUN_ROOT_ENV, "runs")) / f"{args.command}-{run_id}"


def _write_run_log(run_dir: Path, args, started: float) -> None:
    lines = [
        f"# denise {__version__} command={args.command}",
        f"# python={platform.python_version()} numpy={np.__version__} scipy={scipy.__version__}",
        f"# wall_time_s={time.perf_counter() - started:.3f}",
    ]
    for key, value in sorted(vars(args).items()):
        if key in _META_KEYS or value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key}={value}")
    (run_dir / "run.log").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _scene_config(args) -> SceneConfig:
    return SceneConfig(
        image_size=args.image_size,
        occlusion_prob=args.occlusion_prob,
        occlusion_max_fraction=args.occlusion_max_fraction,
        shadow_prob=args.shadow_prob,
        noise_std=args.noise_std,
        seed=args.seed,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.learning_rate, seed=args.seed,
                       patch_radius=args.patch_radius)


def _enhance_config(args) -> EnhanceConfig:
    return EnhanceConfig(variant=args.variant, mode=args.mode, threshold=args.threshold,
                         clip_low=args.clip_low, clip_high=args.clip_high,
                         dilation_radius=args.dilation_radius,
                         preprocess_channel4=args.preprocess_channel4)


def _metrics_config(args) -> MetricsConfig:
    return MetricsConfig(biou_fraction=args.biou_fraction, biou_pixels=args.biou_pixels,
                         eval_threshold=args.eval_threshold)


def _configs(build, args):
    try:
        return build(args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- commands -----------------------------------------------------------------

def cmd_synth(args, run_dir: Path) -> None:
    scene = _configs(_scene_config, args)
    out = args.out or run_dir / "data"
    try:
        manifest = split_dataset(generate_dataset(scene, args.n_images, out), args.ratios, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    save_manifest(manifest, out / "manifest.txt")
    counts = manifest.counts()
    print(f"{out / 'manifest.txt'}: train={counts['train']} val={counts['val']} test={counts['test']}")


def cmd_train(args, run_dir: Path) -> None:
    cfg = _configs(_train_config, args)
    manifest = load_manifest(args.manifest)
    model = train_on_split(manifest, args.split, cfg)
    out = args.out or run_dir / "model.dnw"
    save_checkpoint(model, out)
    print(f"{out}: final epoch loss {model.history[-1]:.6f}")


def cmd_predict(args, run_dir: Path) -> None:
    manifest = load_manifest(args.manifest)
    model = load_checkpoint(args.model) if args.model else None
    out = predict_split(manifest, args.split, args.out or run_dir / "preds", model)
    print(out)


def cmd_enhance(args, run_dir: Path) -> None:
    cfg = _configs(_enhance_config, args)
    manifest = load_manifest(args.manifest)
    split = None if args.split == "all" else args.split
    preds = ingest_predictions(args.predictions, manifest, split)
    enhanced = enhance_split(manifest, preds, cfg, args.out or run_dir / "enhanced", split)
    print(enhanced.root / "manifest.txt")


def cmd_eval(args, run_dir: Path) -> None:
    cfg = _configs(_metrics_config, args)
    if (args.truth is None) == (args.manifest is None):
        raise ConfigError("give exactly one of --truth or --manifest")
    ids = None
    truth = args.truth
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
        entries = manifest.select(None if args.split == "all" else args.split)
        dirs = {manifest.mask_path(e).parent for e in entries}
        if len(dirs) != 1:
            raise InputError("manifest masks are spread over several directories")
        truth, ids = dirs.pop(), [e.sample_id for e in entries]
    report = evaluate_dataset(args.pred, truth, cfg, label=args.label, ids=ids)
    out = args.out or run_dir / "report.txt"
    report.write(out)
    print(f"{out}: mean IoU {report.mean_iou:.4f}, mean BIoU {report.mean_biou:.4f}")


def cmd_compare(args, run_dir: Path) -> None:
    table = compare_runs(load_report(args.baseline), load_report(args.enhanced),
                         model=args.model_name, baseline_method=args.baseline_method,
                         enhanced_method=args.enhanced_method)
    text = table.to_text()
    (args.out or run_dir / "comparison.txt").write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_pipeline(args, run_dir: Path) -> None:
    cfg = _configs(lambda a: PipelineConfig(
        run_dir=run_dir,
        scene=_scene_config(a),
        enhance=_enhance_config(a),
        train=_train_config(a),
        metrics=_metrics_config(a),
        n_images=a.n_images,
        ratios=a.ratios,
        stage1=a.stage1,
        baseline_only=a.baseline_only,
        manifest=a.manifest,
    ), args)
    result = run_pipeline(cfg)
    if result.comparison is not None:
        print(result.comparison.to_text(), end="")
    else:
        b = result.baseline
        print(f"Standalone: IoU {b.mean_iou:.4f} BIoU {b.mean_biou:.4f}")


def main(argv=None) -> int:
    started = time.perf_counter()
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"denise: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"denise: missing input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run_dir = _run_dir(args)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        args.func(args, run_dir)
    except ConfigError as exc:
        print(f"denise {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, FileNotFoundError) as exc:
        print(f"denise {args.command}: missing input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - mapped to the documented exit code
        log.debug("internal failure", exc_info=True)
        print(f"denise {args.command}: internal error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_INTERNAL
    _write_run_log(run_dir, args, started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
