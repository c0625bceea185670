"""Self-contained demo fixtures: a tiny index, a six-question dataset (one
per task), and offline backend stores that answer every question correctly.

build_golden writes everything under one root and returns the paths. The
stores are substring-rule files, so answers depend only on request content;
reruns and parallel runs produce byte-identical outputs. Used by the test
suite and by scripts/make_golden_fixtures.py for a no-network CLI demo.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .backends import OfflineEmbeddingStore
from .corpus import BundlePage, EmbeddingBundle, ingest_embeddings, save_corpus
from .util import dump_json_line

DIM = 16
PATCHES = 5
CREATED = "2026-01-01T00:00:00+00:00"

PAGES = (
    ("p000", "Rule V.1.2: The wheelbase must be at least 1525 mm, measured axle to axle."),
    ("p001", "Rule F.5.1: Suspension travel shall be at least 50 mm total."),
    ("p002", "Rule T.1.4: The chassis is the load-bearing frame of the vehicle."),
    ("p003", "Rule F.8.7.2: The brake system must lock all four wheels in the brake test."),
)

_IMG = {"ref": "drawing.png", "width": 1000, "height": 800}

GOLDEN_QUESTIONS = (
    {
        "qid": "g01",
        "task": "retrieval",
        "question": "Tell me rule V.1.2 verbatim.",
        "images": [],
        "ground_truth": "The wheelbase must be at least 1525 mm, measured axle to axle.",
    },
    {
        "qid": "g02",
        "task": "compilation",
        "question": "List all rules relevant to suspension.",
        "images": [],
        "ground_truth": ["V.1.2", "F.5.1"],
    },
    {
        "qid": "g03",
        "task": "definition",
        "question": "In the context of these rules, what does chassis mean?",
        "images": [_IMG],
        "ground_truth": ["the load-bearing frame"],
    },
    {
        "qid": "g04",
        "task": "presence",
        "question": "Is a firewall present in this assembly?",
        "images": [_IMG],
        "ground_truth": "no",
    },
    {
        "qid": "g05",
        "task": "dimension",
        "question": "Does the tube in this drawing meet the T.7.7.1a diameter requirement?",
        "images": [_IMG],
        "ground_truth": "yes",
    },
    {
        "qid": "g06",
        "task": "functional_performance",
        "question": "Does this brake layout satisfy F.8.7.2 under full load?",
        "images": [_IMG],
        "ground_truth": "no",
    },
)

# question trigger -> reasoner reply; triggers are phrases unique to one
# question so page text in the request can never shadow another rule
REASONER_RULES = (
    ("verbatim", "The wheelbase must be at least 1525 mm, measured axle to axle."),
    ("relevant to suspension", "The relevant rules are V.1.2 and F.5.1."),
    ("what does chassis mean", "the load-bearing frame"),
    ("firewall present", "Answer: no"),
    ("T.7.7.1a diameter", "Answer: yes"),
    ("satisfy F.8.7.2", "Answer: no"),
)

_DESCRIPTION = {
    "figure_type": "engineering drawing",
    "axes": None,
    "data_series": None,
    "annotations": "dimension callouts on the main tube",
    "trends": None,
    "uncertainties": None,
    "conclusions": "single welded tube assembly",
    "report": "A line drawing of a welded tube assembly with dimension callouts.",
}


def _final(answer: str) -> str:
    return json.dumps({"final": True, "answer": answer})


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _page_matrix(i: int) -> np.ndarray:
    rng = np.random.default_rng(1000 + i)
    return rng.standard_normal((PATCHES, DIM)).astype(np.float32)


def _query_matrix(i: int) -> np.ndarray:
    rng = np.random.default_rng(2000 + i)
    return rng.standard_normal((3, DIM)).astype(np.float32)


def build_golden(root: str) -> dict:
    """Write index, bundle, dataset, and offline stores under root."""
    os.makedirs(root, exist_ok=True)

    pages = [
        BundlePage(page_id=pid, embeddings=_page_matrix(i), text=text, image_ref=f"{pid}.png")
        for i, (pid, text) in enumerate(PAGES)
    ]
    corpus = ingest_embeddings(EmbeddingBundle(pages=pages, source="golden-demo"), created=CREATED)
    index_dir = os.path.join(root, "index")
    save_corpus(corpus, index_dir, force=True)

    bundle_dir = os.path.join(root, "bundle")
    os.makedirs(bundle_dir, exist_ok=True)
    entries = []
    for i, (pid, text) in enumerate(PAGES):
        np.save(os.path.join(bundle_dir, f"{pid}.npy"), _page_matrix(i))
        entries.append(
            {"page_id": pid, "embeddings": f"{pid}.npy", "text": text, "image_ref": f"{pid}.png"}
        )
    _write_json(os.path.join(bundle_dir, "bundle.json"), {"source": "golden-demo", "pages": entries})

    dataset_path = os.path.join(root, "dataset.jsonl")
    with open(dataset_path, "w", encoding="utf-8") as fh:
        for q in GOLDEN_QUESTIONS:
            fh.write(dump_json_line(dict(q)) + "\n")

    offline_root = os.path.join(root, "offline")
    chat_dir = os.path.join(offline_root, "chat")
    os.makedirs(chat_dir, exist_ok=True)

    _write_json(
        os.path.join(chat_dir, "reasoner.json"),
        {
            "rules": [{"contains": c, "response": r} for c, r in REASONER_RULES],
            "default": "I cannot determine that from the retrieved pages.",
        },
    )
    # empty reply makes keyword extraction fall back to the deterministic heuristic
    _write_json(os.path.join(chat_dir, "keyword_extractor.json"), {"rules": [], "default": ""})
    _write_json(
        os.path.join(chat_dir, "describer.json"),
        {"rules": [], "default": json.dumps(_DESCRIPTION)},
    )
    _write_json(
        os.path.join(chat_dir, "adjudicator.json"),
        {
            "rules": [{"contains": r, "response": r} for _, r in REASONER_RULES],
            "default": "no consensus",
        },
    )
    # one file serves both routers: answer echoes close supervisor episodes,
    # "Transcript:" (present only in supervisor requests) opens them with a
    # document call, and the default is a task-vote for the sampling router
    router_rules = [{"contains": r, "response": _final(r)} for _, r in REASONER_RULES]
    router_rules.append(
        {
            "contains": "Transcript:",
            "response": json.dumps({"agent": "document", "function": "main", "arguments": {}}),
        }
    )
    _write_json(
        os.path.join(chat_dir, "router.json"),
        {
            "rules": router_rules,
            "default": json.dumps({"test_script": "main", "reason": "demo routing"}),
        },
    )
    _write_json(
        os.path.join(chat_dir, "ocr.json"),
        {"rules": [], "default": "WELDED TUBE ASSEMBLY DWG-42"},
    )

    store = OfflineEmbeddingStore(os.path.join(offline_root, "embeddings"))
    for i, q in enumerate(GOLDEN_QUESTIONS):
        store.add(q["question"], _query_matrix(i))

    return {
        "root": root,
        "index": index_dir,
        "bundle": bundle_dir,
        "dataset": dataset_path,
        "offline_root": offline_root,
    }
