#!/usr/bin/env python3
"""Time full late-interaction ranking against the two-stage prefilter.

Builds a 140-page synthetic corpus (1030 patches x 128 dims per page) and
scores one 32-row query, full rank vs. prefilter with a 30-page shortlist.
"""

import argparse
import time

import numpy as np

from mcerf.retrieval import QueryEmbedding, prefilter_rank, rank_pages
from mcerf.synth import random_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pages", type=int, default=140)
    ap.add_argument("--patches", type=int, default=1030)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--m", type=int, default=30)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    corpus = random_corpus(n_pages=args.pages, patches=args.patches, dim=args.dim, seed=0)
    rng = np.random.default_rng(1)
    query = QueryEmbedding.from_raw(rng.standard_normal((32, args.dim)).astype(np.float32))

    t0 = time.perf_counter()
    full = rank_pages(query, corpus, args.k)
    t_full = time.perf_counter() - t0
    print(f"full rank        {t_full * 1000:8.1f} ms  top: {[h.page_id for h in full]}")

    best = None
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        pre = prefilter_rank(query, corpus, m=args.m, k=args.k)
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
    print(f"prefilter (m={args.m}) {best * 1000:8.1f} ms  top: {[h.page_id for h in pre.hits]}")
    print(f"speedup          {t_full / best:8.2f}x")


if __name__ == "__main__":
    main()
