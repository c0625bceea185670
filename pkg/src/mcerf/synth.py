"""Synthetic corpora for benchmarks and smoke tests.

Pages get Gaussian patch matrices (unit-normalized downstream) and a short
generated text blurb so keyword indexing has something to chew on. Sizes
default to the document-scale shape used in the timing script: 140 pages
of 1030 patches at dimension 128.
"""

from __future__ import annotations

import numpy as np

from .corpus import BundlePage, Corpus, EmbeddingBundle, ingest_embeddings

_WORDS = (
    "vehicle chassis frame rule section requires must tolerance bracket "
    "member tube wheel brake pedal driver harness mount load test inspection "
    "envelope clearance material steel thickness weld joint fastener torque"
).split()


def make_synthetic_bundle(
    n_pages: int = 140,
    patches: int = 1030,
    dim: int = 128,
    seed: int = 0,
) -> EmbeddingBundle:
    rng = np.random.default_rng(seed)
    pages = []
    for i in range(n_pages):
        mat = rng.standard_normal((patches, dim)).astype(np.float32)
        words = rng.choice(_WORDS, size=40)
        text = " ".join(words.tolist())
        pages.append(
            BundlePage(
                page_id=f"page{i:04d}",
                embeddings=mat,
                text=f"Page {i}. {text}.",
                image_ref=f"page{i:04d}.png",
            )
        )
    return EmbeddingBundle(pages=pages, source="synthetic")


def random_corpus(
    n_pages: int = 8,
    patches: int = 16,
    dim: int = 32,
    seed: int = 0,
) -> Corpus:
    bundle = make_synthetic_bundle(n_pages=n_pages, patches=patches, dim=dim, seed=seed)
    return ingest_embeddings(bundle, created="1970-01-01T00:00:00+00:00")


def random_query(patches: int = 12, dim: int = 32, seed: int = 1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((patches, dim)).astype(np.float32)
