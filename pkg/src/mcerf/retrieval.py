"""Late-interaction page retrieval.

A query is a T x D matrix of token embeddings; a page is a P x D matrix of
patch embeddings. The relevance score sums, over query tokens, the maximum
inner product between that token and any patch on the page:

    score(q, p) = sum_i max_j <q_i, p_j>

Rows are unit-normalized so the inner products are cosines. Inputs are
float32; products and sums are accumulated in float64.

prefilter_rank adds a cheap first stage: pages are shortlisted by cosine
between the mean-pooled query vector and a per-page summary embedding
(normalized mean of the page's patches), and only the shortlist is scored
with the full token-level interaction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import Corpus, PageRecord, ZERO_NORM_TOL, normalize_rows, read_emb
from .errors import DimMismatch, MLessThanK

SEMANTIC = "semantic"
LEXICAL = "lexical"


@dataclass(eq=False)
class QueryEmbedding:
    """Unit-normalized query token matrix (T x D float32)."""

    vectors: np.ndarray
    zeroed_rows: list[int] = field(default_factory=list)

    @classmethod
    def from_raw(cls, matrix: np.ndarray) -> "QueryEmbedding":
        vecs, zeroed = normalize_rows(np.asarray(matrix))
        return cls(vectors=vecs, zeroed_rows=zeroed)

    @classmethod
    def from_emb_file(cls, path: str, dim: int) -> "QueryEmbedding":
        return cls.from_raw(read_emb(path, dim))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass(frozen=True)
class RetrievalHit:
    page_id: str
    score: float
    channel: str = SEMANTIC


@dataclass(eq=False)
class PageSummaryEmbedding:
    """Whole-page vector: normalized mean of the page's patch rows."""

    page_id: str
    vector: np.ndarray
    degenerate: bool = False


@dataclass(eq=False)
class PrefilterResult:
    hits: list[RetrievalHit]
    stage1_page_ids: list[str]
    recall: Optional[float] = None


def maxsim_score(query: QueryEmbedding, page: PageRecord) -> float:
    """Late-interaction score of one page for one query."""
    q = query.vectors
    p = page.embeddings
    if q.shape[1] != p.shape[1]:
        raise DimMismatch(f"query dim {q.shape[1]} vs page dim {p.shape[1]}")
    sims = q.astype(np.float64) @ p.astype(np.float64).T
    return float(np.sum(np.max(sims, axis=1)))


def rank_pages(query: QueryEmbedding, corpus: Corpus, k: int) -> list[RetrievalHit]:
    """Top-k pages by maxsim_score, score descending, ties by page_id ascending."""
    if k < 1:
        raise MLessThanK(f"k must be >= 1, got {k}")
    if query.dim != corpus.dim:
        raise DimMismatch(f"query dim {query.dim} vs corpus dim {corpus.dim}")
    scored = [
        RetrievalHit(page_id=p.page_id, score=maxsim_score(query, p)) for p in corpus.pages
    ]
    scored.sort(key=lambda h: (-h.score, h.page_id))
    return scored[: min(k, len(scored))]


def summarize_page(page: PageRecord) -> PageSummaryEmbedding:
    """Normalized mean of patch rows; a near-zero mean yields a flagged zero vector."""
    mean = page.embeddings.astype(np.float64).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < ZERO_NORM_TOL:
        return PageSummaryEmbedding(
            page_id=page.page_id,
            vector=np.zeros(page.embeddings.shape[1], dtype=np.float32),
            degenerate=True,
        )
    return PageSummaryEmbedding(
        page_id=page.page_id, vector=(mean / norm).astype(np.float32)
    )


def _pooled_query_vector(query: QueryEmbedding) -> np.ndarray:
    mean = query.vectors.astype(np.float64).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < ZERO_NORM_TOL:
        return np.zeros_like(mean)
    return mean / norm


def prefilter_rank(
    query: QueryEmbedding,
    corpus: Corpus,
    m: int,
    k: int,
    compute_recall: bool = False,
) -> PrefilterResult:
    """Two-stage ranking: summary-cosine shortlist of size m, then full scoring.

    Stage 1 ranks pages by cosine between the mean-pooled query vector and
    each page's summary embedding and keeps the top m. Stage 2 applies
    rank_pages restricted to the shortlist. With compute_recall=True the
    result also reports |shortlist intersect full top-k| / k, which requires
    scoring every page and is intended for instrumentation only.
    """
    if k < 1:
        raise MLessThanK(f"k must be >= 1, got {k}")
    if m < k:
        raise MLessThanK(f"m ({m}) must be >= k ({k})")
    if query.dim != corpus.dim:
        raise DimMismatch(f"query dim {query.dim} vs corpus dim {corpus.dim}")
    pooled = _pooled_query_vector(query)
    coarse = []
    for p in corpus.pages:
        summary = summarize_page(p)
        cos = float(pooled @ summary.vector.astype(np.float64))
        coarse.append((-cos, p.page_id))
    coarse.sort()
    kept_ids = [pid for _, pid in coarse[: min(m, len(coarse))]]
    kept_set = set(kept_ids)
    shortlist = Corpus(
        pages=[p for p in corpus.pages if p.page_id in kept_set],
        dim=corpus.dim,
        meta=corpus.meta,
    )
    hits = rank_pages(query, shortlist, k)
    recall = None
    if compute_recall:
        full_topk = rank_pages(query, corpus, k)
        denom = min(k, corpus.n_pages)
        overlap = sum(1 for h in full_topk if h.page_id in kept_set)
        recall = overlap / denom if denom else 1.0
    return PrefilterResult(hits=hits, stage1_page_ids=kept_ids, recall=recall)
