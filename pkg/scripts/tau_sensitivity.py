#!/usr/bin/env python3
"""Sweep the graph temperature tau and report end-to-end mIoU.

Two defaults are in circulation for this family of methods (0.07 and 7);
the package ships 0.07. This sweep makes the choice auditable on synthetic
data and is the template for calibrating on real exports.
"""

import argparse
import tempfile

from segrefine.config import config_from_dict
from segrefine.pipeline import run_pipeline
from segrefine.synthetic import build_synthetic_bundle
from segrefine.tensorio import write_bundle, write_tensor


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--taus", type=float, nargs="+",
                        default=[0.01, 0.07, 0.5, 1.0, 7.0])
    parser.add_argument("--noise", type=float, default=0.25)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    bundle, gt = build_synthetic_bundle(grid=(8, 8), num_classes=3,
                                        noise=args.noise, seed=args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        manifest = write_bundle(f"{tmp}/bundle", bundle)
        write_tensor(f"{tmp}/gt.stf", gt)
        print(f"noise={args.noise}  seed={args.seed}")
        print(f"{'tau':>8}  {'miou':>8}")
        for tau in args.taus:
            config = config_from_dict({"graph": {"tau": tau}})
            result = run_pipeline(manifest, config, f"{tmp}/out_{tau}",
                                  gt_path=f"{tmp}/gt.stf")
            print(f"{tau:8.3g}  {result.metrics['miou']:8.4f}")


if __name__ == "__main__":
    main()
