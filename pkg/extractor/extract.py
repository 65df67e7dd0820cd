#!/usr/bin/env python3
"""Export a dual-backbone feature bundle for one image.

    python extract.py --image scene.png \
        --backbone clip_l14+dinov2_b14 \
        --prompts prompts.json --out bundle_dir

prompts.json: {"mode": "ori" | "gen" | "set_of_gen",
               "classes": [{"name": ..., "prompts": [...]}, ...]}

Requires torch, open_clip and torch.hub access to pretrained weights; use
--device cuda for GPU inference. The output directory holds one STF1 file
per tensor role plus manifest.json.
"""

import argparse
import sys

from exporter.backbones import (
    BACKBONE_CHOICES,
    ResolutionIncompatible,
    WeightsUnavailable,
    load_backbone_pair,
    load_image_512,
)
from exporter.export import export_bundle
from exporter.prompts import DEFAULT_TEMPLATE, build_text_embeddings, load_prompt_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--image", required=True)
    parser.add_argument("--backbone", required=True, choices=BACKBONE_CHOICES)
    parser.add_argument("--prompts", required=True, help="prompt spec JSON")
    parser.add_argument("--out", required=True)
    parser.add_argument("--template", default=DEFAULT_TEMPLATE,
                        help="prompt wrapper; '{}' is replaced by each prompt")
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    try:
        spec = load_prompt_spec(args.prompts)
        image = load_image_512(args.image)
        semantic, structural = load_backbone_pair(args.backbone, device=args.device)
        text = build_text_embeddings(spec, semantic.encode_text, args.template)
        manifest = export_bundle(image, semantic.encode(image),
                                 structural.encode(image), text,
                                 spec.class_names, args.out)
    except (WeightsUnavailable, ResolutionIncompatible, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
