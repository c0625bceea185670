from __future__ import annotations

import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcerf.corpus import (
    BundlePage,
    EmbeddingBundle,
    bundle_from_arrays,
    ingest_embeddings,
    load_corpus,
    normalize_rows,
    read_emb,
    save_corpus,
    write_emb,
)
from mcerf.errors import (
    CorruptRecord,
    DimensionMismatch,
    EmptyBundle,
    IoError,
    MissingFile,
    RaggedMatrix,
)

from conftest import make_corpus, random_matrices


def test_normalize_rows_unit_norm():
    mat = np.array([[3.0, 4.0], [0.0, 2.0]], dtype=np.float32)
    out, zeroed = normalize_rows(mat)
    assert out.dtype == np.float32
    assert zeroed == []
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), [1.0, 1.0], atol=1e-6)


def test_normalize_rows_zeroes_degenerate_rows():
    mat = np.array([[1e-12, 0.0], [1.0, 0.0]], dtype=np.float64)
    out, zeroed = normalize_rows(mat)
    assert zeroed == [0]
    assert np.all(out[0] == 0.0)
    np.testing.assert_allclose(out[1], [1.0, 0.0])


def test_normalize_rows_is_stable_for_unit_rows():
    mat = np.array([[1.0, 0.0], [0.6, 0.8]], dtype=np.float32)
    once, _ = normalize_rows(mat)
    twice, _ = normalize_rows(once)
    assert once.tobytes() == twice.tobytes()


@settings(max_examples=50, deadline=None)
@given(
    arrays(
        np.float32,
        st.tuples(st.integers(1, 6), st.integers(1, 5)),
        elements=st.floats(-10, 10, width=32),
    )
)
def test_normalize_rows_idempotent(mat):
    once, _ = normalize_rows(mat)
    twice, _ = normalize_rows(once)
    assert once.tobytes() == twice.tobytes()


def test_ingest_sorts_by_page_id_and_stamps_created():
    pages = [
        BundlePage(page_id="b", embeddings=np.ones((2, 3), dtype=np.float32), text="B", image_ref=""),
        BundlePage(page_id="a", embeddings=np.ones((1, 3), dtype=np.float32), text="A", image_ref=""),
    ]
    corpus = ingest_embeddings(EmbeddingBundle(pages=pages, source="s"), created="t0")
    assert [p.page_id for p in corpus.pages] == ["a", "b"]
    assert corpus.meta.created == "t0"
    assert corpus.dim == 3
    assert corpus.page("a").text == "A"


def test_ingest_rejects_empty_bundle():
    with pytest.raises(EmptyBundle):
        ingest_embeddings(EmbeddingBundle(pages=[], source="s"))


def test_ingest_rejects_ragged_matrix():
    pages = [BundlePage(page_id="p3", embeddings=[[1.0, 2.0], [3.0]], text="", image_ref="")]
    with pytest.raises(RaggedMatrix, match="p3"):
        ingest_embeddings(EmbeddingBundle(pages=pages, source="s"))


def test_ingest_rejects_empty_matrix():
    pages = [BundlePage(page_id="p0", embeddings=np.zeros((0, 4), dtype=np.float32), text="", image_ref="")]
    with pytest.raises(RaggedMatrix):
        ingest_embeddings(EmbeddingBundle(pages=pages, source="s"))


def test_ingest_rejects_dimension_mismatch():
    pages = [
        BundlePage(page_id="a", embeddings=np.ones((2, 3), dtype=np.float32), text="", image_ref=""),
        BundlePage(page_id="b", embeddings=np.ones((2, 4), dtype=np.float32), text="", image_ref=""),
    ]
    with pytest.raises(DimensionMismatch, match="b"):
        ingest_embeddings(EmbeddingBundle(pages=pages, source="s"))


def test_ingest_rejects_duplicate_page_ids():
    pages = [
        BundlePage(page_id="a", embeddings=np.ones((2, 3), dtype=np.float32), text="", image_ref=""),
        BundlePage(page_id="a", embeddings=np.ones((2, 3), dtype=np.float32), text="", image_ref=""),
    ]
    with pytest.raises(CorruptRecord, match="duplicate"):
        ingest_embeddings(EmbeddingBundle(pages=pages, source="s"))


def test_missing_page_lookup_raises():
    corpus = make_corpus(random_matrices(2, 3, 4))
    with pytest.raises(MissingFile):
        corpus.page("nope")


def test_emb_file_round_trip(tmp_path):
    mat = np.random.default_rng(0).standard_normal((5, 7)).astype(np.float32)
    path = str(tmp_path / "x.emb")
    write_emb(path, mat)
    back = read_emb(path, 7)
    assert back.tobytes() == mat.tobytes()


def test_read_emb_rejects_partial_rows(tmp_path):
    path = str(tmp_path / "bad.emb")
    with open(path, "wb") as fh:
        fh.write(b"\x00" * 10)
    with pytest.raises(DimensionMismatch):
        read_emb(path, 3)


def test_save_load_round_trip_is_byte_stable(tmp_path):
    corpus = make_corpus(random_matrices(3, 4, 6, seed=9), texts=["x", "y", "z"])
    out = str(tmp_path / "idx")
    save_corpus(corpus, out)
    loaded = load_corpus(out)
    assert loaded.dim == corpus.dim
    assert [p.page_id for p in loaded.pages] == [p.page_id for p in corpus.pages]
    for a, b in zip(corpus.pages, loaded.pages):
        assert a.embeddings.tobytes() == b.embeddings.tobytes()
        assert a.text == b.text
    # saving the loaded corpus again reproduces identical page bytes
    out2 = str(tmp_path / "idx2")
    save_corpus(loaded, out2)
    for p in corpus.pages:
        with open(os.path.join(out, "pages", f"{p.page_id}.emb"), "rb") as f1:
            with open(os.path.join(out2, "pages", f"{p.page_id}.emb"), "rb") as f2:
                assert f1.read() == f2.read()


def test_save_refuses_overwrite_without_force(tmp_path):
    corpus = make_corpus(random_matrices(1, 2, 3))
    out = str(tmp_path / "idx")
    save_corpus(corpus, out)
    with pytest.raises(IoError, match="exists"):
        save_corpus(corpus, out)
    save_corpus(corpus, out, force=True)


def test_load_rejects_missing_manifest(tmp_path):
    with pytest.raises(MissingFile):
        load_corpus(str(tmp_path / "nowhere"))


def test_load_rejects_bad_version(tmp_path):
    corpus = make_corpus(random_matrices(1, 2, 3))
    out = str(tmp_path / "idx")
    save_corpus(corpus, out)
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    manifest["version"] = 99
    json.dump(manifest, open(os.path.join(out, "manifest.json"), "w"))
    with pytest.raises(CorruptRecord, match="version"):
        load_corpus(out)


def test_load_rejects_patch_count_mismatch(tmp_path):
    corpus = make_corpus(random_matrices(1, 4, 3))
    out = str(tmp_path / "idx")
    save_corpus(corpus, out)
    emb_path = os.path.join(out, "pages", "p000.emb")
    blob = open(emb_path, "rb").read()
    with open(emb_path, "wb") as fh:
        fh.write(blob[: len(blob) // 2])
    with pytest.raises(CorruptRecord):
        load_corpus(out)


def test_zero_rows_survive_save_load(tmp_path):
    mat = np.vstack([np.zeros((1, 4)), np.ones((2, 4))]).astype(np.float32)
    corpus = make_corpus([mat])
    assert corpus.pages[0].zeroed_rows == [0]
    out = str(tmp_path / "idx")
    save_corpus(corpus, out)
    loaded = load_corpus(out)
    assert loaded.pages[0].zeroed_rows == [0]


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 4),
    st.integers(1, 5),
    st.integers(1, 4),
    st.integers(0, 2**31 - 1),
)
def test_round_trip_preserves_scores(tmp_path_factory, n_pages, patches, dim, seed):
    mats = random_matrices(n_pages, patches, dim, seed=seed)
    corpus = make_corpus(mats)
    out = str(tmp_path_factory.mktemp("rt") / "idx")
    save_corpus(corpus, out)
    loaded = load_corpus(out)
    for a, b in zip(corpus.pages, loaded.pages):
        assert a.embeddings.tobytes() == b.embeddings.tobytes()
