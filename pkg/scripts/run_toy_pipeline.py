"""Train every stage on procedural 64x64 data and print the headline numbers."""
import argparse
import json

import numpy as np

from oldphoto.toyrun import ToyRunConfig, run_toy_pipeline


def relative_drop(series, k=20):
    first, last = np.mean(series[:k]), np.mean(series[-k:])
    return float(first), float(last), float(1 - last / first)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the summary here")
    args = ap.parse_args()
    out = run_toy_pipeline(ToyRunConfig(seed=args.seed))
    summary = {k: relative_drop(out[k]) for k in ("vae1_l1", "vae2_l1", "latent_l1", "detector_loss")}
    summary.update(auc=out["auc"], psnr_degraded=out["psnr_degraded"],
                   psnr_restored=out["psnr_restored"], timings=out["timings"])
    for k, (a, b, d) in ((k, summary[k]) for k in ("vae1_l1", "vae2_l1", "latent_l1", "detector_loss")):
        print(f"{k:14s} first {a:.4f} last {b:.4f} drop {100 * d:.1f}%")
    print(f"AUC {out['auc']:.3f}  PSNR degraded {out['psnr_degraded']:.2f}  restored {out['psnr_restored']:.2f}")
    print("seconds:", {k: round(v) for k, v in out["timings"].items()})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
