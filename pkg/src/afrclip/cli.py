"""Command-line interface.

Exit codes: 0 success, 1 I/O failure, 2 protocol or configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from afrclip import ablation, export, metrics
from afrclip.backbone import HookContractError
from afrclip.checkpoint import MANIFEST, CheckpointError
from afrclip.config import ConfigError, RunConfig, load_config, parse_config
from afrclip.core import DegenerateInputError, bilinear_resize
from afrclip.dataio import (
    DatasetError,
    ProtocolViolation,
    check_protocol,
    load_dataset,
    make_synthetic_dataset,
    read_image,
)
from afrclip.evaluate import evaluate
from afrclip.model import CONFIG_FILE, AFRCLIP, build_model
from afrclip.scoring import infer
from afrclip.training import NumericError, train

log = logging.getLogger("afrclip")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config_keys_help() -> str:
    lines = ["config keys (flat 'section.key = value' file; override with --set key=value):"]
    for key, value in RunConfig().items():
        lines.append(f"  {key} = {value!r}")
    return "\n".join(lines)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run config file")
    p.add_argument("--checkpoint", type=Path, help="checkpoint directory (trainable tensors + config.txt)")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--workers", type=int, help="image decoding threads for evaluation (0 = CPU count)")
    p.add_argument("--backbone", help="surrogate, surrogate:<seed> or file:<dir>; overrides backbone.source")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")


def _checkpoint_config(path: Path | None) -> RunConfig | None:
    if path is None:
        return None
    if not (path / MANIFEST).is_file():
        raise CliError(f"no checkpoint at {path}", EXIT_IO)
    cfg_file = path / CONFIG_FILE
    return load_config(cfg_file) if cfg_file.is_file() else None


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    """Defaults, then checkpoint config, then --config, then flags."""
    cfg = base if base is not None else RunConfig()
    if args.config is not None:
        if not args.config.is_file():
            raise CliError(f"config file {args.config} not found", EXIT_IO)
        cfg = parse_config(args.config.read_text(), cfg)
    if args.seed is not None:
        cfg.set("train.seed", args.seed)
    if args.workers is not None:
        cfg.set("eval.workers", args.workers)
    if args.backbone is not None:
        cfg.set("backbone.source", args.backbone)
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
    cfg.validate()
    return cfg


def _dataset(root: str, dataset_id: str, what: str):
    if not root:
        raise ConfigError(f"data.{what}_root is not set")
    if not Path(root).exists():
        raise CliError(f"{what} dataset root {root} does not exist", EXIT_IO)
    return load_dataset(root, dataset_id or None)


def _load_model(args, cfg: RunConfig) -> AFRCLIP:
    if args.checkpoint is None:
        log.warning("no --checkpoint given; using untrained adapters")
        return build_model(cfg)
    return AFRCLIP.load(args.checkpoint, cfg)


# commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    manifest = _dataset(cfg.data.train_root, cfg.data.train_id, "train")
    if cfg.data.test_id:
        check_protocol(manifest.dataset_id, cfg.data.test_id)
    cfg.set("data.train_id", manifest.dataset_id)
    out = args.out or Path(cfg.train.out_dir)
    model = build_model(cfg)
    result = train(cfg, manifest, model, out)
    print(f"best checkpoint: {result.best_checkpoint}")
    print(f"last checkpoint: {result.last_checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.checkpoint is None:
        raise ConfigError("eval needs --checkpoint")
    base = _checkpoint_config(args.checkpoint)
    trained_on = base.data.train_id if base is not None else ""
    cfg = resolve_config(args, base)
    manifest = _dataset(cfg.data.test_root, cfg.data.test_id, "test")
    if trained_on:
        check_protocol(trained_on, manifest.dataset_id)
    model = AFRCLIP.load(args.checkpoint, cfg)
    if not manifest.has_masks:
        log.warning("%s has no ground-truth masks; reporting image level only", manifest.dataset_id)
    rows = evaluate(model, manifest, per_image_pixel=cfg.eval.per_image_pixel, workers=cfg.eval.workers)
    out = args.out or Path(cfg.eval.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics.results_csv(rows))
    table = metrics.results_table(rows)
    (out / "metrics.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    base = _checkpoint_config(args.checkpoint)
    cfg = resolve_config(args, base)
    size = cfg.backbone.image_size
    try:
        image = read_image(args.image, size)
        full_h, full_w = read_image(args.image).shape[:2]
    except DatasetError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    model = _load_model(args, cfg)
    log.info("prompts for %r are built from the templates", args.class_name)
    res = infer(image, args.class_name, model)
    heat = bilinear_resize(res.heatmap, (full_h, full_w))
    out = args.out or Path(".")
    stem = args.image.stem
    export.write_score(res.image_score, out / f"{stem}_score.txt")
    export.write_heatmap_png(heat, out / f"{stem}_heatmap.png")
    if args.raw:
        export.write_heatmap_raw(heat, out / f"{stem}_heatmap")
    print(f"{stem}: anomaly score {res.image_score:.6f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    train_set = _dataset(cfg.data.train_root, cfg.data.train_id, "train")
    test_set = _dataset(cfg.data.test_root, cfg.data.test_id, "test")
    check_protocol(train_set.dataset_id, test_set.dataset_id)
    cfg.set("data.train_id", train_set.dataset_id)
    out = args.out or Path("runs") / f"ablate_{args.sweep}"
    rows = ablation.run_sweep(cfg, args.sweep, train_set, test_set, out, workers=cfg.eval.workers)
    out.mkdir(parents=True, exist_ok=True)
    text = ablation.sweep_csv(rows)
    (out / "ablation.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_print_config(args) -> int:
    base = _checkpoint_config(args.checkpoint)
    print(resolve_config(args, base).dumps(), end="")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    if args.out is None:
        raise ConfigError("make-synthetic needs --out")
    man = make_synthetic_dataset(args.out, seed=args.seed or 0, n_classes=args.classes,
                                 n_per_class=args.per_class, image_size=args.size,
                                 first_class=args.first_class, dataset_id=args.dataset_id)
    n_pos = sum(r.label for r in man.records)
    print(f"{man.dataset_id}: {len(man)} images ({n_pos} defective), classes {', '.join(man.classes)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="afrclip", description="Zero-shot anomaly detection toolkit.",
                                     epilog=_config_keys_help(), formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_config_keys_help(),
                           formatter_class=fmt)
        _common(p)
        p.set_defaults(func=fn)
        return p

    add("train", cmd_train, "train the adapters on data.train_root")
    add("eval", cmd_eval, "evaluate a checkpoint on data.test_root")
    p = add("predict", cmd_predict, "score one image and export its heat map")
    p.add_argument("image", type=Path)
    p.add_argument("--class-name", required=True, help="object class used in the prompts")
    p.add_argument("--raw", action="store_true", help="also write the float32 heat map tensor")
    p = add("ablate", cmd_ablate, "train and evaluate every cell of a toggle grid")
    p.add_argument("--sweep", required=True, choices=sorted(ablation.SWEEPS))
    add("print-config", cmd_print_config, "print the resolved configuration")
    p = add("make-synthetic", cmd_make_synthetic, "write a procedurally generated dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--first-class", type=int, default=0)
    p.add_argument("--dataset-id")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ProtocolViolation as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, DegenerateInputError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, HookContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
