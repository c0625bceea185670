"""Page corpus: ingestion, normalization, and the on-disk index format.

A corpus is a list of pages, each carrying a patch-embedding matrix
(P x D float32, rows unit-normalized), the page's plain text, and an
opaque image locator. On disk an index is a directory:

    manifest.json           version, dim, page table (id, patch count, image ref)
    pages/<page_id>.emb     little-endian float32, row-major, P x D
    pages/<page_id>.txt     UTF-8 page text

Embedding bytes survive a save/load cycle unchanged: rows already within
NORM_REUSE_TOL of unit norm are left untouched on load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CorruptRecord,
    DimensionMismatch,
    EmptyBundle,
    IoError,
    MissingFile,
    RaggedMatrix,
)

FORMAT_VERSION = 1

# Rows with L2 norm below this are zeroed and flagged rather than divided.
ZERO_NORM_TOL = 1e-8
# Rows already this close to unit norm are reused byte-for-byte.
NORM_REUSE_TOL = 1e-5


def normalize_rows(matrix: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Unit-normalize matrix rows, returning (float32 matrix, zeroed row indices).

    Norms are computed in float64. Near-zero rows (norm < ZERO_NORM_TOL) are
    set to exact zeros and reported. Rows already within NORM_REUSE_TOL of
    unit norm keep their original float32 bytes so normalization is a stable
    no-op on data that has been normalized before.
    """
    mat = np.asarray(matrix)
    if mat.ndim != 2:
        raise RaggedMatrix(f"expected a 2-D matrix, got shape {mat.shape}")
    wide = mat.astype(np.float64, copy=False)
    norms = np.linalg.norm(wide, axis=1)
    out = mat.astype(np.float32, copy=True)
    zeroed = []
    for i, norm in enumerate(norms):
        if norm < ZERO_NORM_TOL:
            out[i, :] = 0.0
            zeroed.append(i)
        elif abs(norm - 1.0) > NORM_REUSE_TOL:
            out[i, :] = (wide[i] / norm).astype(np.float32)
    return out, zeroed


@dataclass(eq=False)
class PageRecord:
    """One corpus page: embeddings plus its text and image locator."""

    page_id: str
    embeddings: np.ndarray
    text: str = ""
    image_ref: str = ""
    zeroed_rows: list[int] = field(default_factory=list)

    @property
    def n_patches(self) -> int:
        return int(self.embeddings.shape[0])


@dataclass
class CorpusMeta:
    source: str = ""
    created: str = ""


@dataclass(eq=False)
class Corpus:
    pages: list[PageRecord]
    dim: int
    meta: CorpusMeta = field(default_factory=CorpusMeta)

    @property
    def n_pages(self) -> int:
        return len(self.pages)

    def page(self, page_id: str) -> PageRecord:
        for p in self.pages:
            if p.page_id == page_id:
                return p
        raise MissingFile(f"no page with id {page_id}")


@dataclass(eq=False)
class BundlePage:
    """Raw per-page input before normalization."""

    page_id: str
    embeddings: np.ndarray
    text: str = ""
    image_ref: str = ""


@dataclass(eq=False)
class EmbeddingBundle:
    pages: list[BundlePage]
    source: str = ""


def ingest_embeddings(bundle: EmbeddingBundle, created: Optional[str] = None) -> Corpus:
    """Build a normalized Corpus from a raw embedding bundle.

    Raises EmptyBundle for a bundle with no pages, RaggedMatrix when a page
    matrix is not a well-formed 2-D float matrix with at least one row, and
    DimensionMismatch when pages disagree on embedding width.
    """
    if not bundle.pages:
        raise EmptyBundle("bundle contains no pages")
    dim = None
    pages = []
    seen_ids = set()
    for raw in bundle.pages:
        try:
            mat = np.asarray(raw.embeddings, dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise RaggedMatrix(f"page {raw.page_id}: {exc}") from exc
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise RaggedMatrix(
                f"page {raw.page_id}: expected P x D matrix with P >= 1, got shape {mat.shape}"
            )
        if dim is None:
            dim = int(mat.shape[1])
        elif int(mat.shape[1]) != dim:
            raise DimensionMismatch(
                f"page {raw.page_id} has dim {mat.shape[1]}, bundle dim is {dim}"
            )
        if raw.page_id in seen_ids:
            raise CorruptRecord(f"duplicate page_id {raw.page_id}")
        seen_ids.add(raw.page_id)
        emb, zeroed = normalize_rows(mat)
        pages.append(
            PageRecord(
                page_id=str(raw.page_id),
                embeddings=emb,
                text=raw.text or "",
                image_ref=raw.image_ref or "",
                zeroed_rows=zeroed,
            )
        )
    pages.sort(key=lambda p: p.page_id)
    stamp = created or datetime.now(timezone.utc).isoformat()
    return Corpus(pages=pages, dim=int(dim), meta=CorpusMeta(source=bundle.source, created=stamp))


def write_emb(path: str, matrix: np.ndarray) -> None:
    """Write a float32 matrix as little-endian row-major bytes."""
    data = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(data)


def read_emb(path: str, dim: int) -> np.ndarray:
    """Read a raw .emb file into a float32 matrix of width dim."""
    with open(path, "rb") as fh:
        blob = fh.read()
    n_floats = len(blob) // 4
    if len(blob) % 4 != 0 or n_floats % dim != 0:
        raise DimensionMismatch(
            f"{path}: {len(blob)} bytes is not a whole number of {dim}-wide float32 rows"
        )
    flat = np.frombuffer(blob, dtype="<f4")
    return flat.reshape(n_floats // dim, dim).astype(np.float32, copy=True)


def save_corpus(corpus: Corpus, path: str, force: bool = False) -> None:
    """Write a corpus index directory. Refuses to overwrite unless force."""
    if os.path.exists(path) and not force:
        if os.listdir(path) if os.path.isdir(path) else True:
            raise IoError(f"{path} already exists; pass force to overwrite")
    try:
        os.makedirs(os.path.join(path, "pages"), exist_ok=True)
        manifest = {
            "version": FORMAT_VERSION,
            "source": corpus.meta.source,
            "created": corpus.meta.created,
            "n_pages": corpus.n_pages,
            "dim": corpus.dim,
            "pages": [
                {"page_id": p.page_id, "patches": p.n_patches, "image_ref": p.image_ref}
                for p in corpus.pages
            ],
        }
        with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for p in corpus.pages:
            write_emb(os.path.join(path, "pages", f"{p.page_id}.emb"), p.embeddings)
            with open(
                os.path.join(path, "pages", f"{p.page_id}.txt"), "w", encoding="utf-8"
            ) as fh:
                fh.write(p.text)
    except OSError as exc:
        raise IoError(f"cannot write index at {path}: {exc}") from exc


def load_corpus(path: str) -> Corpus:
    """Load an index directory written by save_corpus.

    Every embedding row is re-normalized on load (stable no-op for rows that
    are already unit norm); rows with norm < ZERO_NORM_TOL are zeroed and
    flagged in PageRecord.zeroed_rows.
    """
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise MissingFile(f"no manifest.json under {path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptRecord(f"unreadable manifest at {manifest_path}: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise CorruptRecord(f"unsupported index version {manifest.get('version')!r}")
    dim = int(manifest["dim"])
    pages = []
    for entry in manifest["pages"]:
        page_id = str(entry["page_id"])
        emb_path = os.path.join(path, "pages", f"{page_id}.emb")
        txt_path = os.path.join(path, "pages", f"{page_id}.txt")
        if not os.path.isfile(emb_path):
            raise MissingFile(f"missing embedding file {emb_path}")
        mat = read_emb(emb_path, dim)
        if mat.shape[0] != int(entry["patches"]):
            raise CorruptRecord(
                f"page {page_id}: {mat.shape[0]} rows on disk, manifest says {entry['patches']}"
            )
        emb, zeroed = normalize_rows(mat)
        text = ""
        if os.path.isfile(txt_path):
            with open(txt_path, "r", encoding="utf-8") as fh:
                text = fh.read()
        pages.append(
            PageRecord(
                page_id=page_id,
                embeddings=emb,
                text=text,
                image_ref=entry.get("image_ref", ""),
                zeroed_rows=zeroed,
            )
        )
    meta = CorpusMeta(source=manifest.get("source", ""), created=manifest.get("created", ""))
    if len(pages) != int(manifest["n_pages"]):
        raise CorruptRecord(
            f"manifest lists {manifest['n_pages']} pages, found {len(pages)}"
        )
    return Corpus(pages=pages, dim=dim, meta=meta)


def bundle_from_arrays(
    matrices: Sequence[np.ndarray],
    texts: Optional[Sequence[str]] = None,
    image_refs: Optional[Sequence[str]] = None,
    source: str = "",
) -> EmbeddingBundle:
    """Convenience wrapper: page i gets page_id "p00i" and the i-th text/image ref."""
    pages = []
    for i, mat in enumerate(matrices):
        pages.append(
            BundlePage(
                page_id=f"p{i:03d}",
                embeddings=mat,
                text=texts[i] if texts else "",
                image_ref=image_refs[i] if image_refs else "",
            )
        )
    return EmbeddingBundle(pages=pages, source=source)
