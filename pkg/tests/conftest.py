from __future__ import annotations

import numpy as np
import pytest

from mcerf.backends import BackendSet, ScriptedChatBackend, ScriptedEmbedder
from mcerf.corpus import Corpus, bundle_from_arrays, ingest_embeddings
from mcerf.golden import build_golden
from mcerf.pipelines import QueryTask, Task


def make_corpus(matrices, texts=None, image_refs=None, created="2026-01-01T00:00:00+00:00") -> Corpus:
    return ingest_embeddings(
        bundle_from_arrays(matrices, texts=texts, image_refs=image_refs, source="test"),
        created=created,
    )


def random_matrices(n_pages: int, patches: int, dim: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((patches, dim)).astype(np.float32) for _ in range(n_pages)]


def fixed_embedder(patches: int = 3, dim: int = 8, seed: int = 11) -> ScriptedEmbedder:
    mat = np.random.default_rng(seed).standard_normal((patches, dim)).astype(np.float32)
    return ScriptedEmbedder(lambda text: mat)


def make_task(question: str = "What is the wheelbase?", task: str = "retrieval", images=(), qid="q0", gt=None) -> QueryTask:
    return QueryTask(qid=qid, task=Task(task), question=question, images=list(images), ground_truth=gt)


def echo_backend() -> ScriptedChatBackend:
    """Reasoner mock that answers with the full request text, so tests can
    assert exactly what the model was shown."""
    return ScriptedChatBackend(lambda req: req.text_content())


@pytest.fixture()
def small_corpus() -> Corpus:
    return make_corpus(
        random_matrices(4, 5, 8, seed=3),
        texts=[
            "Rule V.1.2: wheelbase shall exceed 1525 mm.",
            "Rule F.5.1: suspension travel minimum.",
            "Rule T.1.4: chassis definition page.",
            "Rule F.8.7.2: brake test procedure.",
        ],
    )


@pytest.fixture()
def basic_backends(small_corpus) -> BackendSet:
    return BackendSet(
        reasoner=ScriptedChatBackend(lambda req: "The wheelbase is 1525 mm."),
        embedder=fixed_embedder(),
    )


@pytest.fixture(scope="session")
def golden_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("golden")
    return build_golden(str(root))
