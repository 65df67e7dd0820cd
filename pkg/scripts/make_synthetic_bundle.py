#!/usr/bin/env python3
"""Emit a synthetic feature bundle (plus ground truth) for pipeline runs.

Example:
    python scripts/make_synthetic_bundle.py --out /tmp/bundle --grid 8 8 \
        --classes 3 --noise 0.1 --seed 7
    segrefine run --manifest /tmp/bundle/manifest.json --out /tmp/run \
        --gt /tmp/bundle/gt.stf
"""

import argparse
import os

from segrefine.synthetic import build_synthetic_bundle
from segrefine.tensorio import write_bundle, write_tensor


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--grid", type=int, nargs=2, default=(8, 8),
                        metavar=("ROWS", "COLS"))
    parser.add_argument("--patch-px", type=int, default=4)
    parser.add_argument("--classes", type=int, default=2)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    bundle, gt = build_synthetic_bundle(
        grid=tuple(args.grid), patch_px=args.patch_px, num_classes=args.classes,
        feature_dim=args.dim, noise=args.noise, seed=args.seed)
    manifest = write_bundle(args.out, bundle)
    gt_path = os.path.join(args.out, "gt.stf")
    write_tensor(gt_path, gt)
    print(f"manifest: {manifest}")
    print(f"ground truth: {gt_path}")


if __name__ == "__main__":
    main()
