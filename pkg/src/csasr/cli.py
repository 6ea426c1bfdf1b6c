"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import checks, selftest
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, dump_config, load_run_config
from .dataset import DatasetError, make_splits, read_split_file, scan_dataset, write_split_file
from .imaging import SUPPORTED_SUFFIXES, ImageError, degrade, load_image, save_image, to_float
from .network import super_resolve
from .tensor import inject_backward_fault
from .trainer import (
    DatasetBatches,
    NonFiniteLossError,
    evaluate,
    init_state,
    resume,
    split_items,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("csasr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--scale", type=int, choices=(2, 3, 4))
    p.add_argument("--seed", type=int)
    p.add_argument("--pretty", action="store_true", help="human-readable tables instead of CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csasr", description="Channel/spatial-attention transformer super-resolution")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("train", help="train (or resume) a model")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset root (class subdirectories)")
    p.add_argument("--out", type=Path, default=Path("runs/default"))
    p.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    p.add_argument("--split-file", type=Path)

    p = subs.add_parser("eval", help="score a checkpoint or the bicubic baseline on a split")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--baseline", choices=("bicubic",))
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--split-file", type=Path)
    p.add_argument("--out", type=Path, help="write the CSV report here (directory or .csv path)")

    p = subs.add_parser("sr", help="super-resolve images with a checkpoint")
    _common(p)
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("sr_out"))

    p = subs.add_parser("degrade", help="write bicubic LR/HR pairs for a directory of HR images")
    _common(p)
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = subs.add_parser("gradcheck", help="run the finite-difference gradient suite")
    _common(p)
    p.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)

    p = subs.add_parser("selftest", help="run the built-in example assertions")
    _common(p)
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config, args.set)
    if args.scale is not None:
        cfg.model.scale = args.scale
    if args.seed is not None:
        cfg.train.seed = args.seed
    cfg.model.validate()
    cfg.train.validate()
    return cfg


def _splits(args, index, seed: int, default_file: Path | None = None):
    path = args.split_file or default_file
    if path is not None and path.exists():
        return read_split_file(index, path, seed)
    return make_splits(index, seed)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    model_cfg, train_cfg = cfg.model, cfg.train
    index = scan_dataset(args.data)
    splits = _splits(args, index, train_cfg.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_split_file(index, splits, args.out / "split.tsv")
    (args.out / "config.txt").write_text("\n".join(dump_config(cfg)) + "\n")
    if args.checkpoint:
        state, ckpt = resume(args.checkpoint, model_cfg)
    else:
        state = init_state(model_cfg, train_cfg)
    t = model_cfg.transformer
    batch = train_cfg.batch_for(model_cfg.scale)
    source = DatasetBatches(index, splits.train, model_cfg.scale, train_cfg.patch_hr, batch,
                            patch_multiple=max(t.patch_h, t.patch_w) * model_cfg.scale, augment=train_cfg.augment)
    iters = train_cfg.iters_per_epoch or max(1, -(-len(splits.train) // batch))
    val_items = split_items(index, splits.val)

    def validate(params) -> float:
        return evaluate(params, model_cfg, val_items, model_cfg.scale).mean_psnr

    result = train(model_cfg, train_cfg, source, iters_per_epoch=iters, state=state,
                   evaluate_fn=validate if val_items else None, out_dir=args.out,
                   log_path=args.out / "train_log.csv")
    best = result.state.best_psnr
    print(f"trained to epoch {result.state.epoch} ({result.state.iteration} iterations)")
    if best is None:
        print(f"no validation images; latest weights in {args.out / 'last.ckpt'}")
    else:
        print(f"best validation PSNR {best:.3f} dB in {args.out / 'best.ckpt'}")
    return EXIT_OK


def _write_report(report, args) -> None:
    text = report.pretty() if args.pretty else report.to_csv()
    if args.out is not None:
        path = args.out if args.out.suffix == ".csv" else args.out / "eval.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_csv())
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.baseline is None):
        raise UsageError("eval needs exactly one of --checkpoint or --baseline bicubic")
    cfg = _run_config(args)
    index = scan_dataset(args.data)
    params = None
    model_cfg = cfg.model
    default_split = None
    if args.checkpoint is not None:
        state, ckpt = resume(args.checkpoint)
        params, model_cfg = state.params, ckpt.model_config
        default_split = args.checkpoint.parent / "split.tsv"
        if args.scale is not None and args.scale != model_cfg.scale:
            raise UsageError(f"checkpoint was trained for x{model_cfg.scale}, not x{args.scale}")
    splits = _splits(args, index, cfg.train.seed, default_split)
    items = split_items(index, splits.get(args.split))
    mode = "bicubic" if args.baseline else "model"
    report = evaluate(params, model_cfg, items, model_cfg.scale, mode=mode)
    _write_report(report, args)
    return EXIT_OK


def cmd_sr(args) -> int:
    state, ckpt = resume(args.checkpoint)
    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        lr = to_float(load_image(path))
        sr = super_resolve(lr, ckpt.model_config, state.params)
        target = args.out / f"{path.stem}_x{ckpt.model_config.scale}.png"
        save_image(target, sr)
        print(target)
    return EXIT_OK


def cmd_degrade(args) -> int:
    scale = args.scale or _run_config(args).model.scale
    src = args.input
    if src.is_file():
        files = [src]
        root = src.parent
    elif src.is_dir():
        root = src
        files = sorted(p for p in src.rglob("*") if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES)
    else:
        raise DatasetError(f"{src} does not exist")
    if not files:
        raise DatasetError(f"no images found under {src}")
    lr_dir, hr_dir = args.out / f"LR_x{scale}", args.out / "HR"
    for path in files:
        rel = path.relative_to(root).with_suffix(".png")
        pair = degrade(to_float(load_image(path)), scale)
        for base, img in ((lr_dir, pair.lr), (hr_dir, pair.hr)):
            (base / rel).parent.mkdir(parents=True, exist_ok=True)
            save_image(base / rel, img)
    print(f"wrote {len(files)} pair(s) to {lr_dir} and {hr_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed or 0
    if args.inject_fault:
        with inject_backward_fault(args.inject_fault, 1.01):
            reports = checks.gradcheck_suite(seed)
    else:
        reports = checks.gradcheck_suite(seed)
    for r in reports:
        print(r.line())
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_selftest(args) -> int:
    failures = selftest.run(verbose=True)
    print(f"{len(selftest.CHECKS) - len(failures)}/{len(selftest.CHECKS)} self-test checks passed")
    return EXIT_NUMERIC if failures else EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sr": cmd_sr,
    "degrade": cmd_degrade,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def run_command(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ImageError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
