#!/usr/bin/env python3
"""Generate a synthetic embedding bundle directory for `mcerf index`.

Defaults match the document-scale timing setup: 140 pages of 1030 patches
at dimension 128.
"""

import argparse
import json
import os

import numpy as np

from mcerf.synth import make_synthetic_bundle


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="bundle directory to write")
    ap.add_argument("--pages", type=int, default=140)
    ap.add_argument("--patches", type=int, default=1030)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    bundle = make_synthetic_bundle(
        n_pages=args.pages, patches=args.patches, dim=args.dim, seed=args.seed
    )
    os.makedirs(args.out, exist_ok=True)
    entries = []
    for page in bundle.pages:
        np.save(os.path.join(args.out, f"{page.page_id}.npy"), page.embeddings)
        entries.append(
            {
                "page_id": page.page_id,
                "embeddings": f"{page.page_id}.npy",
                "text": page.text,
                "image_ref": page.image_ref,
            }
        )
    with open(os.path.join(args.out, "bundle.json"), "w", encoding="utf-8") as fh:
        json.dump({"source": bundle.source, "pages": entries}, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(entries)} pages to {args.out}")


if __name__ == "__main__":
    main()
