"""Memorize one synthetic 32x32 patch with the toy model and report loss and PSNR.

    python scripts/overfit_smoke.py --scale 2 --steps 2000
"""
import argparse

from csasr.config import TrainConfig, toy_model_config
from csasr.smoke import overfit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", type=int, default=2, choices=(2, 3, 4))
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full", action="store_true", help="run every step instead of stopping once targets are met")
    args = ap.parse_args()
    res = overfit(toy_model_config(args.scale), TrainConfig(lr=args.lr, seed=args.seed), max_steps=args.steps,
                  stop_early=not args.full)
    for i in range(0, len(res.losses), 100):
        print(f"step {i + 1:5d}  loss {res.losses[i]:.5f}")
    print(f"steps {res.steps}  loss ratio {res.loss_ratio:.4f}")
    print(f"SR {res.sr_psnr:.2f} dB  bicubic {res.bicubic_psnr:.2f} dB  gain {res.psnr_gain:+.2f} dB  ({res.seconds:.0f}s)")


if __name__ == "__main__":
    main()
