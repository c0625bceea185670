"""The five retrieval-and-reasoning pipeline variants.

All variants share one skeleton: embed the question, rank corpus pages,
compose a prompt from the retrieved pages (rank order) plus the question,
and make one reasoning call. They differ in how pages are found and how
images are handled:

  main              semantic ranking only
  hybrid            semantic ranking interleaved with BM25 keyword hits
  self_consistency  five independent main passes, then a blind adjudicator
  high_reasoning    main, with the reasoning-effort flag raised
  vision2text       question images replaced by structured descriptions
                    produced from quadrant crops (images required)

Every backend call lands exactly once in the output trace with its stage,
latency, and attempt count; errors raised mid-pipeline are wrapped in
StageError naming the stage that failed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .backends import (
    BackendSet,
    ChatRequest,
    ChatResponse,
    Effort,
    ImagePart,
    Part,
    TextPart,
)
from .corpus import Corpus, PageRecord
from .errors import GuardNoImage, PipelineFailure, StageError
from .keywords import Bm25Index, build_bm25, bm25_rank, extract_keywords, hybrid_merge
from .prompts import load_prompt
from .retrieval import QueryEmbedding, RetrievalHit, prefilter_rank, rank_pages
from .vision import DEFAULT_FRACTION, ImageRef, describe_image, split_quadrants, upscale_spec


class Task(str, Enum):
    RETRIEVAL = "retrieval"
    COMPILATION = "compilation"
    DEFINITION = "definition"
    PRESENCE = "presence"
    DIMENSION = "dimension"
    FUNCTIONAL_PERFORMANCE = "functional_performance"


class Variant(str, Enum):
    MAIN = "main"
    HYBRID = "hybrid"
    SELF_CONSISTENCY = "self_consistency"
    HIGH_REASONING = "high_reasoning"
    VISION2TEXT = "vision2text"


@dataclass
class QueryTask:
    qid: str
    task: Task
    question: str
    images: list[ImageRef] = field(default_factory=list)
    ground_truth: Union[str, list, None] = None


@dataclass
class Citation:
    page_id: str
    channel: str

    def to_dict(self) -> dict:
        return {"page_id": self.page_id, "channel": self.channel}


@dataclass
class TraceEvent:
    stage: str
    backend: str = ""
    latency_ms: float = 0.0
    attempts: int = 0
    detail: str = ""
    ok: bool = True

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "backend": self.backend,
            "latency_ms": round(self.latency_ms, 3),
            "attempts": self.attempts,
            "detail": self.detail,
            "ok": self.ok,
        }


@dataclass
class PipelineOutput:
    answer: str
    variant: Variant
    cited_pages: list[Citation] = field(default_factory=list)
    candidates: Optional[list[str]] = None
    trace: list[TraceEvent] = field(default_factory=list)


@dataclass
class PipelineSettings:
    """Shared knobs for all variants."""

    k: int = 5
    fraction: float = DEFAULT_FRACTION
    passes: int = 5
    quorum: int = 3
    prefilter_m: Optional[int] = None
    budget: int = 4


def _guard(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (StageError, PipelineFailure):
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc


def _chat_event(trace: list[TraceEvent], stage: str, resp: ChatResponse, detail: str = "") -> None:
    trace.append(
        TraceEvent(
            stage=stage,
            backend=resp.meta.backend_id,
            latency_ms=resp.meta.latency_ms,
            attempts=resp.meta.attempts,
            detail=detail,
        )
    )


def _embed(question: str, backends: BackendSet, trace: list[TraceEvent]) -> QueryEmbedding:
    embedder = backends.require("embedder")
    start = time.perf_counter()
    emb = _guard("embed_query", embedder.embed, question)
    trace.append(
        TraceEvent(
            stage="embed_query",
            backend=type(embedder).__name__,
            latency_ms=(time.perf_counter() - start) * 1000.0,
            attempts=1,
            detail=f"{emb.vectors.shape[0]} tokens",
        )
    )
    return emb


def _rank(
    query: QueryEmbedding,
    corpus: Corpus,
    settings: PipelineSettings,
    trace: list[TraceEvent],
) -> list[RetrievalHit]:
    start = time.perf_counter()
    if settings.prefilter_m is not None:
        hits = _guard(
            "rank_pages",
            lambda: prefilter_rank(query, corpus, settings.prefilter_m, settings.k).hits,
        )
        detail = f"top {len(hits)} of {corpus.n_pages} pages (prefilter m={settings.prefilter_m})"
    else:
        hits = _guard("rank_pages", rank_pages, query, corpus, settings.k)
        detail = f"top {len(hits)} of {corpus.n_pages} pages"
    trace.append(
        TraceEvent(
            stage="rank_pages",
            latency_ms=(time.perf_counter() - start) * 1000.0,
            detail=detail,
        )
    )
    return hits


def compose_reasoner_request(
    question: str,
    pages: list[PageRecord],
    question_images: list[ImageRef],
    descriptions: Optional[list] = None,
    effort: Effort = Effort.STANDARD,
    deterministic: bool = True,
) -> ChatRequest:
    """Prompt order: page contexts in rank order, then images or their
    descriptions, then the question text."""
    parts: list[Part] = []
    for page in pages:
        if page.image_ref:
            parts.append(ImagePart(ref=page.image_ref, tag=f"page_image:{page.page_id}"))
        if page.text:
            parts.append(
                TextPart(f"Page {page.page_id}:\n{page.text}", tag=f"page_text:{page.page_id}")
            )
    if descriptions is not None:
        for i, desc in enumerate(descriptions):
            parts.append(
                TextPart(f"Image {i} description:\n{desc.digest_text()}", tag=f"description:{i}")
            )
    for i, img in enumerate(question_images):
        parts.append(ImagePart(ref=img.locator, tag=f"question_image:{i}"))
    parts.append(TextPart(question, tag="question"))
    return ChatRequest(
        system_prompt=load_prompt("main_system"),
        parts=parts,
        effort=effort,
        deterministic=deterministic,
    )


def _reason(
    req: ChatRequest, backends: BackendSet, trace: list[TraceEvent]
) -> ChatResponse:
    reasoner = backends.require("reasoner")
    resp = _guard("reason", reasoner.chat, req)
    _chat_event(
        trace,
        "reason",
        resp,
        detail="" if resp.meta.effort_honored else "effort not honored",
    )
    return resp


def run_main(
    q: QueryTask,
    corpus: Corpus,
    backends: BackendSet,
    settings: Optional[PipelineSettings] = None,
    effort: Effort = Effort.STANDARD,
    deterministic: bool = True,
    variant: Variant = Variant.MAIN,
) -> PipelineOutput:
    settings = settings or PipelineSettings()
    trace: list[TraceEvent] = []
    query = _embed(q.question, backends, trace)
    hits = _rank(query, corpus, settings, trace)
    pages = [corpus.page(h.page_id) for h in hits]
    req = compose_reasoner_request(
        q.question, pages, q.images, effort=effort, deterministic=deterministic
    )
    resp = _reason(req, backends, trace)
    return PipelineOutput(
        answer=resp.text,
        variant=variant,
        cited_pages=[Citation(h.page_id, h.channel) for h in hits],
        trace=trace,
    )


def run_high_reasoning(
    q: QueryTask,
    corpus: Corpus,
    backends: BackendSet,
    settings: Optional[PipelineSettings] = None,
) -> PipelineOutput:
    return run_main(
        q, corpus, backends, settings, effort=Effort.HIGH, variant=Variant.HIGH_REASONING
    )


def run_hybrid(
    q: QueryTask,
    corpus: Corpus,
    backends: BackendSet,
    settings: Optional[PipelineSettings] = None,
    bm25: Optional[Bm25Index] = None,
) -> PipelineOutput:
    settings = settings or PipelineSettings()
    trace: list[TraceEvent] = []
    query = _embed(q.question, backends, trace)
    semantic = _rank(query, corpus, settings, trace)

    responses: list[ChatResponse] = []
    start = time.perf_counter()
    keywords = _guard(
        "extract_keywords",
        extract_keywords,
        q.question,
        backends.keyword_extractor,
        responses,
    )
    for resp in responses:
        _chat_event(trace, "extract_keywords", resp)
    trace.append(
        TraceEvent(
            stage="keywords",
            latency_ms=(time.perf_counter() - start) * 1000.0,
            detail=f"source={keywords.source.value} terms={len(keywords.terms)}",
        )
    )

    if bm25 is None:
        bm25 = _guard("build_bm25", build_bm25, corpus)
    start = time.perf_counter()
    lexical = _guard("bm25_rank", bm25_rank, keywords, bm25, settings.k)
    merged = _guard("hybrid_merge", hybrid_merge, semantic, lexical, settings.k)
    trace.append(
        TraceEvent(
            stage="hybrid_merge",
            latency_ms=(time.perf_counter() - start) * 1000.0,
            detail=f"{len(lexical)} lexical + {len(semantic)} semantic -> {len(merged)}",
        )
    )

    pages = [corpus.page(h.page_id) for h in merged]
    req = compose_reasoner_request(q.question, pages, q.images)
    resp = _reason(req, backends, trace)
    return PipelineOutput(
        answer=resp.text,
        variant=Variant.HYBRID,
        cited_pages=[Citation(h.page_id, h.channel) for h in merged],
        trace=trace,
    )


def run_self_consistency(
    q: QueryTask,
    corpus: Corpus,
    backends: BackendSet,
    settings: Optional[PipelineSettings] = None,
) -> PipelineOutput:
    """Five independent main passes, then adjudication over candidates only.

    Each pass runs with the determinism flag off. Passes may fail
    individually; at least `quorum` successes are required, otherwise the
    whole pipeline fails. The adjudicator sees the numbered candidate
    answers and nothing else, in particular not the question.
    """
    settings = settings or PipelineSettings()
    trace: list[TraceEvent] = []
    candidates: list[str] = []
    citations: list[Citation] = []
    seen_pages: set = set()
    for i in range(settings.passes):
        try:
            out = run_main(q, corpus, backends, settings, deterministic=False)
        except Exception as exc:
            trace.append(
                TraceEvent(stage=f"pass_{i + 1}", detail=str(exc), ok=False)
            )
            continue
        trace.extend(out.trace)
        trace.append(TraceEvent(stage=f"pass_{i + 1}", detail="ok"))
        candidates.append(out.answer)
        for cite in out.cited_pages:
            if cite.page_id not in seen_pages:
                seen_pages.add(cite.page_id)
                citations.append(cite)
    if len(candidates) < settings.quorum:
        raise PipelineFailure(
            f"only {len(candidates)} of {settings.passes} passes succeeded,"
            f" quorum is {settings.quorum}"
        )
    if len(candidates) < settings.passes:
        trace.append(
            TraceEvent(
                stage="self_consistency",
                detail=f"shortfall: adjudicating {len(candidates)} of {settings.passes}",
            )
        )
    numbered = "\n\n".join(
        f"Candidate {i + 1}: {text}" for i, text in enumerate(candidates)
    )
    system = load_prompt("adjudicator").replace("{n}", str(len(candidates)))
    req = ChatRequest(system_prompt=system, parts=[TextPart(numbered, tag="candidates")])
    adjudicator = backends.require("adjudicator")
    resp = _guard("adjudicate", adjudicator.chat, req)
    _chat_event(trace, "adjudicate", resp, detail=f"{len(candidates)} candidates")
    return PipelineOutput(
        answer=resp.text,
        variant=Variant.SELF_CONSISTENCY,
        cited_pages=citations,
        candidates=candidates,
        trace=trace,
    )


def run_vision2text(
    q: QueryTask,
    corpus: Corpus,
    backends: BackendSet,
    settings: Optional[PipelineSettings] = None,
    deep: bool = False,
) -> PipelineOutput:
    """Replace question images with text descriptions before reasoning.

    Each image is split into four overlapping quadrants, each upscaled to
    the resolution floor, and described by the describer backend from the
    original plus the crops. The reasoner then sees page contexts and the
    descriptions; the raw question images are attached only in deep mode.
    Questions without images are refused with GuardNoImage.
    """
    settings = settings or PipelineSettings()
    if not q.images:
        raise GuardNoImage(f"{q.qid}: vision2text requires at least one image")
    trace: list[TraceEvent] = []
    query = _embed(q.question, backends, trace)
    hits = _rank(query, corpus, settings, trace)
    pages = [corpus.page(h.page_id) for h in hits]

    describer = backends.require("describer")
    descriptions = []
    for i, img in enumerate(q.images):
        quadrants = _guard("split_quadrants", split_quadrants, img, settings.fraction)
        quadrants = [upscale_spec(quad) for quad in quadrants]
        desc, responses = _guard(
            "describe_image", describe_image, img, quadrants, describer, deep
        )
        for resp in responses:
            _chat_event(trace, "describe_image", resp, detail=f"image {i}")
        descriptions.append(desc)

    req = compose_reasoner_request(
        q.question,
        pages,
        q.images if deep else [],
        descriptions=descriptions,
        effort=Effort.HIGH,
    )
    resp = _reason(req, backends, trace)
    return PipelineOutput(
        answer=resp.text,
        variant=Variant.VISION2TEXT,
        cited_pages=[Citation(h.page_id, h.channel) for h in hits],
        trace=trace,
    )


def run_variant(
    variant: Union[Variant, str],
    q: QueryTask,
    corpus: Corpus,
    backends: BackendSet,
    settings: Optional[PipelineSettings] = None,
    bm25: Optional[Bm25Index] = None,
    deep: bool = False,
) -> PipelineOutput:
    variant = Variant(variant)
    if variant == Variant.MAIN:
        return run_main(q, corpus, backends, settings)
    if variant == Variant.HYBRID:
        return run_hybrid(q, corpus, backends, settings, bm25=bm25)
    if variant == Variant.SELF_CONSISTENCY:
        return run_self_consistency(q, corpus, backends, settings)
    if variant == Variant.HIGH_REASONING:
        return run_high_reasoning(q, corpus, backends, settings)
    return run_vision2text(q, corpus, backends, settings, deep=deep)
