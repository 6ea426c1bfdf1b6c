"""Exploratory long training run with the full-width model (not part of any test).

Expect many CPU-days for meaningful numbers. Resume with --checkpoint.

    python scripts/long_run.py /data/UCMerced_LandUse/Images --out runs/x3 --epochs 50
"""
import argparse
import logging
import sys

from csasr.cli import run_command
from csasr.config import dump_config, full_model_config


def main():
    logging.basicConfig(level=logging.INFO)
    ap = argparse.ArgumentParser()
    ap.add_argument("root")
    ap.add_argument("--out", default="runs/long_x3")
    ap.add_argument("--scale", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=1500)
    ap.add_argument("--checkpoint")
    args = ap.parse_args()
    model = full_model_config(args.scale)
    overrides = []
    for line in dump_config(model, "model."):
        key, value = (s.strip() for s in line.split("=", 1))
        overrides += ["--set", f"{key}={value}"]
    argv = ["train", "--data", args.root, "--out", args.out, "--scale", str(args.scale),
            "--set", f"train.epochs={args.epochs}", "--set", "train.patch_hr=96"] + overrides
    if args.checkpoint:
        argv += ["--checkpoint", args.checkpoint]
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
