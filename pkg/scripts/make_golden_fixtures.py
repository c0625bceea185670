#!/usr/bin/env python3
"""Write the six-question offline demo (index, dataset, scripted stores).

Everything needed for a no-network end-to-end run:

    python3 scripts/make_golden_fixtures.py --out golden
    mcerf eval --index golden/index --dataset golden/dataset.jsonl \
        --variant main --offline --offline-root golden/offline --out golden/run
"""

import argparse

from mcerf.golden import build_golden


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="golden", help="fixture root directory")
    args = ap.parse_args()
    paths = build_golden(args.out)
    for name, path in paths.items():
        print(f"{name:13s} {path}")


if __name__ == "__main__":
    main()
