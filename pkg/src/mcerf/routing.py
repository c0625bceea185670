"""Variant selection: a task-level sampling router and a per-question
supervisor loop.

route_task_r1 samples up to 20 questions from a task, asks the router
backend to pick a variant for each (JSON {"test_script": ..., "reason":
...}), and majority-votes the answers; ties fall to the fixed priority
order hybrid, main, high_reasoning, vision2text. The decision applies to
every question of the task.

route_question_r2 runs a supervisor conversation per question. Each step
the supervisor either calls an agent -- document(main | hybrid |
high_reasoning) or vision(vision2text | deep_vision2text) -- or returns a
final answer. Results are appended to a transcript that is replayed in the
next prompt. When the step budget runs out, one forced synthesis call over
the transcript produces the answer.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .backends import BackendSet, ChatRequest, ImagePart, TextPart
from .corpus import Corpus
from .errors import (
    AllRoutesUnparseable,
    BudgetExhaustedWithoutAnswer,
    McerfError,
    UnknownVariant,
    UnparseableAction,
    UnparseableRoute,
)
from .keywords import Bm25Index
from .pipelines import (
    Citation,
    PipelineOutput,
    PipelineSettings,
    QueryTask,
    TraceEvent,
    Variant,
    run_high_reasoning,
    run_hybrid,
    run_main,
)
from .prompts import load_prompt
from .util import strip_code_fences
from .vision import describe_image, split_quadrants, upscale_spec


class RouteMode(str, Enum):
    VLM = "vlm"
    OCR = "ocr"


# Tie-break order for majority votes; also the set of router-eligible variants.
ROUTER_PRIORITY = (
    Variant.HYBRID,
    Variant.MAIN,
    Variant.HIGH_REASONING,
    Variant.VISION2TEXT,
)

SAMPLE_CAP = 20


@dataclass
class RouteDecision:
    variant: Variant
    reason: str
    mode: RouteMode = RouteMode.VLM
    per_question: bool = False

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "reason": self.reason,
            "mode": self.mode.value,
            "per_question": self.per_question,
        }


def _normalize_variant(raw: str) -> Variant:
    name = re.sub(r"[\s\-]+", "_", raw.strip().lower())
    try:
        variant = Variant(name)
    except ValueError:
        raise UnknownVariant(f"unknown variant {raw!r}") from None
    if variant not in ROUTER_PRIORITY:
        raise UnknownVariant(f"variant {raw!r} is not router-eligible")
    return variant


def parse_route_json(text: str) -> RouteDecision:
    """Parse a router reply; code fences are stripped, otherwise strict JSON."""
    body = strip_code_fences(text)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise UnparseableRoute(f"route reply is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("test_script"), str):
        raise UnparseableRoute("route reply lacks a 'test_script' string")
    variant = _normalize_variant(doc["test_script"])
    return RouteDecision(variant=variant, reason=str(doc.get("reason", "")))


def _router_request(q: QueryTask, backends: BackendSet, mode: RouteMode) -> ChatRequest:
    system = load_prompt("router_system")
    if mode == RouteMode.VLM:
        text = load_prompt("router_user_vlm").format(question=q.question)
        parts: list = [TextPart(text, tag="question")]
        for i, img in enumerate(q.images):
            parts.append(ImagePart(ref=img.locator, tag=f"question_image:{i}"))
        return ChatRequest(system_prompt=system, parts=parts)
    ocr = backends.require("ocr")
    snippets = [ocr.ocr(img) for img in q.images]
    image_text = "\n".join(s for s in snippets if s and s.strip())
    if not image_text:
        image_text = "No image or no text in image"
    text = load_prompt("router_user_ocr").format(question=q.question, image_text=image_text)
    return ChatRequest(system_prompt=system, parts=[TextPart(text, tag="question")])


def route_task_r1(
    task: str,
    questions: list[QueryTask],
    backends: BackendSet,
    seed: int = 0,
    mode: RouteMode = RouteMode.VLM,
) -> RouteDecision:
    """Majority-vote a variant for a whole task from a seeded question sample."""
    if not questions:
        raise AllRoutesUnparseable(f"task {task}: no questions to sample")
    router = backends.require("router")
    rng = random.Random(seed)
    n = min(SAMPLE_CAP, len(questions))
    sample = rng.sample(questions, n)
    votes: list[Variant] = []
    last_error: Optional[Exception] = None
    for q in sample:
        try:
            reply = router.chat(_router_request(q, backends, mode))
            votes.append(parse_route_json(reply.text).variant)
        except McerfError as exc:
            last_error = exc
    if not votes:
        raise AllRoutesUnparseable(
            f"task {task}: all {n} sampled votes failed ({last_error})"
        )
    tally = Counter(votes)
    top = max(tally.values())
    winner = next(v for v in ROUTER_PRIORITY if tally.get(v, 0) == top)
    counts = " ".join(
        f"{v.value}={tally[v]}" for v in ROUTER_PRIORITY if tally.get(v, 0) > 0
    )
    reason = f"majority vote over {len(votes)}/{n} parsed samples: {counts}"
    return RouteDecision(variant=winner, reason=reason, mode=mode, per_question=False)


# supervisor loop


@dataclass
class TranscriptRecord:
    agent: str
    function: str
    input_digest: str
    output_digest: str
    output_text: str

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "function": self.function,
            "input_digest": self.input_digest,
            "output_digest": self.output_digest,
            "output_text": self.output_text,
        }


@dataclass
class SupervisorState:
    budget: int
    step: int = 0
    transcript: list[TranscriptRecord] = field(default_factory=list)


_DOCUMENT_FUNCTIONS = ("main", "hybrid", "high_reasoning")
_VISION_FUNCTIONS = ("vision2text", "deep_vision2text")


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _parse_action(text: str) -> dict:
    body = strip_code_fences(text)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise UnparseableAction(f"action is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UnparseableAction("action is JSON but not an object")
    if doc.get("final"):
        answer = doc.get("answer")
        if not isinstance(answer, str):
            raise UnparseableAction("final action lacks an 'answer' string")
        return {"final": True, "answer": answer}
    agent = doc.get("agent")
    function = re.sub(r"[\s\-]+", "_", str(doc.get("function", "")).strip().lower())
    if agent == "document" and function in _DOCUMENT_FUNCTIONS:
        pass
    elif agent == "vision" and function in _VISION_FUNCTIONS:
        pass
    else:
        raise UnparseableAction(f"unknown agent/function {agent!r}/{function!r}")
    arguments = doc.get("arguments", {})
    if not isinstance(arguments, dict):
        raise UnparseableAction("'arguments' must be an object")
    return {"final": False, "agent": agent, "function": function, "arguments": arguments}


def _render_transcript(state: SupervisorState) -> str:
    if not state.transcript:
        return "(no agent calls yet)"
    blocks = []
    for i, rec in enumerate(state.transcript, start=1):
        blocks.append(f"[step {i}] {rec.agent}.{rec.function}\n{rec.output_text}")
    return "\n\n".join(blocks)


def _supervisor_request(q: QueryTask, state: SupervisorState, extra: str = "") -> ChatRequest:
    lines = [f"Question: {q.question}"]
    if q.images:
        lines.append(f"(The question has {len(q.images)} attached image(s).)")
    lines.append("")
    lines.append("Transcript:")
    lines.append(_render_transcript(state))
    if extra:
        lines.append("")
        lines.append(extra)
    parts: list = [TextPart("\n".join(lines), tag="supervisor_state")]
    for i, img in enumerate(q.images):
        parts.append(ImagePart(ref=img.locator, tag=f"question_image:{i}"))
    return ChatRequest(system_prompt=load_prompt("supervisor_system"), parts=parts)


def _run_vision_function(
    q: QueryTask,
    backends: BackendSet,
    settings: PipelineSettings,
    deep: bool,
    trace: list[TraceEvent],
) -> str:
    if not q.images:
        return "No image is attached to this question."
    describer = backends.require("describer")
    digests = []
    for i, img in enumerate(q.images):
        quads = [upscale_spec(s) for s in split_quadrants(img, settings.fraction)]
        desc, responses = describe_image(img, quads, describer, deep=deep)
        for resp in responses:
            trace.append(
                TraceEvent(
                    stage="describe_image",
                    backend=resp.meta.backend_id,
                    latency_ms=resp.meta.latency_ms,
                    attempts=resp.meta.attempts,
                    detail=f"image {i}",
                )
            )
        digests.append(desc.digest_text())
    return "\n\n".join(digests)


def route_question_r2(
    q: QueryTask,
    corpus: Corpus,
    backends: BackendSet,
    settings: Optional[PipelineSettings] = None,
    bm25: Optional[Bm25Index] = None,
) -> tuple[PipelineOutput, SupervisorState]:
    """Answer one question with the supervisor loop.

    Returns the pipeline output and the supervisor state whose transcript
    records every step (agent, function, input/output digests). The output's
    variant is the last document function executed, vision2text if only
    vision calls ran, and main for a pure supervisor answer.
    """
    settings = settings or PipelineSettings()
    supervisor = backends.require("router")
    state = SupervisorState(budget=settings.budget)
    trace: list[TraceEvent] = []
    citations: list[Citation] = []
    seen_pages: set = set()
    last_variant: Optional[Variant] = None
    vision_used = False

    def output_variant() -> Variant:
        if last_variant is not None:
            return last_variant
        if vision_used:
            return Variant.VISION2TEXT
        return Variant.MAIN

    def finish(answer: str) -> tuple[PipelineOutput, SupervisorState]:
        return (
            PipelineOutput(
                answer=answer,
                variant=output_variant(),
                cited_pages=citations,
                trace=trace,
            ),
            state,
        )

    while state.step < state.budget:
        start = time.perf_counter()
        reply = supervisor.chat(_supervisor_request(q, state))
        trace.append(
            TraceEvent(
                stage="supervisor",
                backend=reply.meta.backend_id,
                latency_ms=reply.meta.latency_ms,
                attempts=reply.meta.attempts,
                detail=f"step {state.step + 1}",
            )
        )
        try:
            action = _parse_action(reply.text)
        except UnparseableAction:
            repair = supervisor.chat(
                _supervisor_request(
                    q, state, extra="Reply with exactly one valid JSON action object."
                )
            )
            trace.append(
                TraceEvent(
                    stage="supervisor",
                    backend=repair.meta.backend_id,
                    latency_ms=repair.meta.latency_ms,
                    attempts=repair.meta.attempts,
                    detail=f"step {state.step + 1} repair",
                )
            )
            action = _parse_action(repair.text)
        state.step += 1
        if action["final"]:
            state.transcript.append(
                TranscriptRecord(
                    agent="supervisor",
                    function="final",
                    input_digest=_digest(q.question),
                    output_digest=_digest(action["answer"]),
                    output_text=action["answer"],
                )
            )
            trace.append(
                TraceEvent(stage="supervisor_step", detail="supervisor.final")
            )
            return finish(action["answer"])
        agent, function = action["agent"], action["function"]
        input_digest = _digest(q.question + json.dumps(action["arguments"], sort_keys=True))
        if agent == "document":
            if function == "main":
                out = run_main(q, corpus, backends, settings)
                last_variant = Variant.MAIN
            elif function == "hybrid":
                out = run_hybrid(q, corpus, backends, settings, bm25=bm25)
                last_variant = Variant.HYBRID
            else:
                out = run_high_reasoning(q, corpus, backends, settings)
                last_variant = Variant.HIGH_REASONING
            trace.extend(out.trace)
            for cite in out.cited_pages:
                if cite.page_id not in seen_pages:
                    seen_pages.add(cite.page_id)
                    citations.append(cite)
            result_text = out.answer
        else:
            result_text = _run_vision_function(
                q, backends, settings, deep=(function == "deep_vision2text"), trace=trace
            )
            vision_used = True
        state.transcript.append(
            TranscriptRecord(
                agent=agent,
                function=function,
                input_digest=input_digest,
                output_digest=_digest(result_text),
                output_text=result_text,
            )
        )
        trace.append(
            TraceEvent(
                stage="supervisor_step",
                detail=f"{agent}.{function}",
                latency_ms=(time.perf_counter() - start) * 1000.0,
            )
        )

    # Budget exhausted without a final action: one forced synthesis call.
    try:
        reply = supervisor.chat(
            _supervisor_request(q, state, extra=load_prompt("supervisor_synthesize"))
        )
    except Exception as exc:
        raise BudgetExhaustedWithoutAnswer(
            f"{q.qid}: synthesis call failed after budget {state.budget}: {exc}"
        ) from exc
    trace.append(
        TraceEvent(
            stage="synthesize",
            backend=reply.meta.backend_id,
            latency_ms=reply.meta.latency_ms,
            attempts=reply.meta.attempts,
        )
    )
    answer = reply.text
    try:
        action = _parse_action(reply.text)
        if action["final"]:
            answer = action["answer"]
    except UnparseableAction:
        pass
    if not answer.strip():
        raise BudgetExhaustedWithoutAnswer(
            f"{q.qid}: synthesis produced an empty answer after budget {state.budget}"
        )
    state.transcript.append(
        TranscriptRecord(
            agent="supervisor",
            function="synthesize",
            input_digest=_digest(q.question),
            output_digest=_digest(answer),
            output_text=answer,
        )
    )
    return finish(answer)
