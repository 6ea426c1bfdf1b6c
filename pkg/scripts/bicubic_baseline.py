"""Bicubic-upscale PSNR/SSIM over a seeded test split of a UCMerced-layout directory.

    python scripts/bicubic_baseline.py /data/UCMerced_LandUse/Images --scale 3
"""
import argparse
import logging

from csasr.config import toy_model_config
from csasr.dataset import make_splits, scan_dataset
from csasr.trainer import evaluate, split_items


def main():
    logging.basicConfig(level=logging.INFO)
    ap = argparse.ArgumentParser()
    ap.add_argument("root")
    ap.add_argument("--scale", type=int, default=3, choices=(2, 3, 4))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--split", default="test")
    args = ap.parse_args()
    index = scan_dataset(args.root)
    spec = make_splits(index, args.seed)
    report = evaluate(None, toy_model_config(args.scale), split_items(index, spec.get(args.split)), args.scale,
                      mode="bicubic")
    print(report.pretty())


if __name__ == "__main__":
    main()
