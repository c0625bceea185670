from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcerf.errors import DimMismatch, MLessThanK
from mcerf.retrieval import (
    QueryEmbedding,
    maxsim_score,
    prefilter_rank,
    rank_pages,
    summarize_page,
)

from conftest import make_corpus, random_matrices


def naive_maxsim(query: np.ndarray, page: np.ndarray) -> float:
    """Triple-loop transcription of the late-interaction score."""
    total = 0.0
    for qi in query:
        best = -np.inf
        for pj in page:
            dot = 0.0
            for a, b in zip(qi, pj):
                dot += float(a) * float(b)
            best = max(best, dot)
        total += best
    return total


def naive_rank(query, corpus, k):
    scored = [(naive_maxsim(query.vectors, p.embeddings), p.page_id) for p in corpus.pages]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return scored[:k]


def test_maxsim_matches_naive_oracle_fixed_case():
    rng = np.random.default_rng(5)
    corpus = make_corpus([rng.standard_normal((7, 6)).astype(np.float32)])
    query = QueryEmbedding.from_raw(rng.standard_normal((4, 6)).astype(np.float32))
    page = corpus.pages[0]
    expected = naive_maxsim(query.vectors, page.embeddings)
    assert maxsim_score(query, page) == pytest.approx(expected, abs=1e-9)


def test_maxsim_identical_unit_rows_score_row_count():
    corpus = make_corpus([np.eye(4, dtype=np.float32)])
    query = QueryEmbedding.from_raw(np.eye(4, dtype=np.float32))
    assert maxsim_score(query, corpus.pages[0]) == pytest.approx(4.0)


def test_rank_pages_orders_by_score_then_page_id():
    rng = np.random.default_rng(0)
    corpus = make_corpus(random_matrices(6, 4, 8, seed=2))
    query = QueryEmbedding.from_raw(rng.standard_normal((3, 8)).astype(np.float32))
    hits = rank_pages(query, corpus, k=6)
    expected = naive_rank(query, corpus, 6)
    assert [h.page_id for h in hits] == [pid for _, pid in expected]
    for h, (score, _) in zip(hits, expected):
        assert h.score == pytest.approx(score, abs=1e-6)
    assert all(h.channel == "semantic" for h in hits)


def test_rank_pages_tie_breaks_on_page_id():
    mat = np.eye(4, dtype=np.float32)[:2]
    corpus = make_corpus([mat.copy(), mat.copy(), mat.copy()])
    query = QueryEmbedding.from_raw(mat)
    hits = rank_pages(query, corpus, k=3)
    assert [h.page_id for h in hits] == ["p000", "p001", "p002"]
    assert hits[0].score == pytest.approx(hits[2].score)


def test_rank_pages_k_must_be_positive():
    corpus = make_corpus(random_matrices(2, 3, 4))
    query = QueryEmbedding.from_raw(np.ones((2, 4), dtype=np.float32))
    with pytest.raises(MLessThanK):
        rank_pages(query, corpus, k=0)


def test_rank_pages_rejects_dim_mismatch():
    corpus = make_corpus(random_matrices(2, 3, 4))
    query = QueryEmbedding.from_raw(np.ones((2, 5), dtype=np.float32))
    with pytest.raises(DimMismatch):
        rank_pages(query, corpus, k=1)


def test_rank_pages_caps_k_at_corpus_size():
    corpus = make_corpus(random_matrices(3, 2, 4))
    query = QueryEmbedding.from_raw(np.ones((1, 4), dtype=np.float32))
    assert len(rank_pages(query, corpus, k=10)) == 3


def test_zero_norm_query_rows_do_not_poison_scores():
    corpus = make_corpus([np.eye(3, dtype=np.float32)])
    raw = np.vstack([np.zeros((1, 3)), np.eye(3)[:1]]).astype(np.float32)
    query = QueryEmbedding.from_raw(raw)
    assert query.zeroed_rows == [0]
    hits = rank_pages(query, corpus, k=1)
    assert np.isfinite(hits[0].score)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 6),  # pages
    st.integers(1, 5),  # patches
    st.integers(1, 4),  # dim
    st.integers(1, 4),  # query rows
    st.integers(0, 2**31 - 1),
)
def test_rank_pages_matches_naive_oracle(n_pages, patches, dim, q_rows, seed):
    rng = np.random.default_rng(seed)
    corpus = make_corpus(random_matrices(n_pages, patches, dim, seed=seed))
    query = QueryEmbedding.from_raw(rng.standard_normal((q_rows, dim)).astype(np.float32))
    k = min(3, n_pages)
    hits = rank_pages(query, corpus, k=k)
    expected = naive_rank(query, corpus, k)
    assert [h.page_id for h in hits] == [pid for _, pid in expected]
    for h, (score, _) in zip(hits, expected):
        assert h.score == pytest.approx(score, abs=1e-6)


def test_summarize_page_is_normalized_mean():
    mat, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((4, 4)))
    corpus = make_corpus([mat[:2].astype(np.float32)])
    summary = summarize_page(corpus.pages[0])
    assert not summary.degenerate
    assert np.linalg.norm(summary.vector) == pytest.approx(1.0, abs=1e-6)
    mean = corpus.pages[0].embeddings.astype(np.float64).mean(axis=0)
    np.testing.assert_allclose(summary.vector, mean / np.linalg.norm(mean), atol=1e-6)


def test_summarize_page_flags_degenerate_mean():
    mat = np.array([[1.0, 0.0], [-1.0, 0.0]], dtype=np.float32)
    corpus = make_corpus([mat])
    summary = summarize_page(corpus.pages[0])
    assert summary.degenerate
    assert np.all(summary.vector == 0.0)


def test_prefilter_requires_m_at_least_k():
    corpus = make_corpus(random_matrices(5, 3, 4))
    query = QueryEmbedding.from_raw(np.ones((2, 4), dtype=np.float32))
    with pytest.raises(MLessThanK):
        prefilter_rank(query, corpus, m=2, k=3)


def test_prefilter_equals_full_rank_when_recall_is_one():
    hits_equal = 0
    for seed in range(20):
        corpus = make_corpus(random_matrices(50, 6, 16, seed=seed))
        query = QueryEmbedding.from_raw(
            np.random.default_rng(seed + 999).standard_normal((4, 16)).astype(np.float32)
        )
        full = rank_pages(query, corpus, k=5)
        result = prefilter_rank(query, corpus, m=30, k=5, compute_recall=True)
        assert result.recall is not None
        if result.recall == 1.0:
            hits_equal += 1
            assert [h.page_id for h in result.hits] == [h.page_id for h in full]
            for a, b in zip(result.hits, full):
                assert a.score == pytest.approx(b.score, abs=1e-9)
    assert hits_equal > 0


def adversarial_corpus():
    """Page p000's patches cancel in the mean, hiding a perfect patch match
    from the whole-page prefilter stage."""
    dim = 4
    e1 = np.eye(dim, dtype=np.float32)[0]
    e2 = np.eye(dim, dtype=np.float32)[1]
    decoy = (0.6 * e1 + 0.8 * e2).astype(np.float32)
    return make_corpus([np.vstack([e1, -e1, e2]), decoy[None, :]])


def test_prefilter_adversarial_summary_misses_best_page():
    corpus = adversarial_corpus()
    query = QueryEmbedding.from_raw(np.eye(4, dtype=np.float32)[:1])
    full = rank_pages(query, corpus, k=1)
    assert full[0].page_id == "p000"
    result = prefilter_rank(query, corpus, m=1, k=1, compute_recall=True)
    assert result.recall is not None and result.recall < 1.0
    assert [h.page_id for h in result.hits] != [h.page_id for h in full]


def test_prefilter_recall_not_computed_by_default():
    corpus = make_corpus(random_matrices(5, 3, 4, seed=1))
    query = QueryEmbedding.from_raw(np.ones((2, 4), dtype=np.float32))
    result = prefilter_rank(query, corpus, m=4, k=2)
    assert result.recall is None
    assert len(result.stage1_page_ids) == 4
