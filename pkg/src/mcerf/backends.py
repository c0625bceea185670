"""Model backends: chat, query embedding, and OCR.

Three interchangeable implementations of one chat contract:

  * OpenAICompatibleBackend talks to a chat-completions HTTP endpoint,
    retrying 429/5xx/timeouts with exponential backoff (base 1 s, factor 2).
  * ScriptedChatBackend replays an in-process script; used in tests.
  * OfflineChatBackend answers from a JSON rules file on disk, matched by
    substring against the request text, so whole runs work with no network.

API keys are read from the environment at request time using the variable
named in BackendConfig and never appear in logs or error messages.

Query embeddings come either from an HTTP endpoint or from an offline store
directory where each entry is keyed by the SHA-256 hex digest of the query
text ("<digest>.emb" raw float32 rows plus "<digest>.json" with the shape).
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import httpx
import numpy as np

from .corpus import read_emb, write_emb
from .errors import (
    AuthError,
    BackendFailure,
    MalformedResponse,
    MissingFile,
    MissingOfflineEmbedding,
    MissingOfflineResponse,
    RateLimited,
    Timeout,
)
from .retrieval import QueryEmbedding

logger = logging.getLogger("mcerf.backends")


class Effort(str, Enum):
    STANDARD = "standard"
    HIGH = "high"


@dataclass
class TextPart:
    text: str
    tag: str = ""


@dataclass
class ImagePart:
    """Reference to an image to attach.

    data carries raw bytes when already materialized. crop, when set, means
    this part is a sub-region of ref that a loader must materialize before
    the bytes exist (see OpenAICompatibleBackend's part_loader).
    """

    ref: str
    data: Optional[bytes] = None
    crop: Optional[object] = None
    tag: str = ""


Part = Union[TextPart, ImagePart]


@dataclass
class ChatRequest:
    system_prompt: str
    parts: list[Part]
    effort: Effort = Effort.STANDARD
    deterministic: bool = True
    max_output: Optional[int] = None

    def text_content(self) -> str:
        """System prompt, text parts, and image refs joined; used for matching."""
        chunks = [self.system_prompt]
        for part in self.parts:
            if isinstance(part, TextPart):
                chunks.append(part.text)
            else:
                chunks.append(part.ref)
        return "\n".join(chunks)

    def image_parts(self) -> list[ImagePart]:
        return [p for p in self.parts if isinstance(p, ImagePart)]


@dataclass
class ResponseMeta:
    backend_id: str = ""
    latency_ms: float = 0.0
    attempts: int = 1
    effort_honored: bool = True
    tokens: Optional[dict] = None


@dataclass
class ChatResponse:
    text: str
    meta: ResponseMeta = field(default_factory=ResponseMeta)


@dataclass
class BackendConfig:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "MCERF_API_KEY"
    timeout_s: float = 60.0
    retries: int = 2
    retry_base_s: float = 1.0
    retry_factor: float = 2.0
    supports_effort: bool = True
    max_concurrency: int = 4


def _effort_honored(effort: Effort, supports: bool) -> bool:
    return effort != Effort.HIGH or supports


class ChatBackend:
    """Anything with chat(ChatRequest) -> ChatResponse."""

    def chat(self, req: ChatRequest) -> ChatResponse:
        raise NotImplementedError


def default_part_loader(part: ImagePart) -> bytes:
    if part.data is not None:
        return part.data
    if part.crop is not None:
        raise BackendFailure(
            f"image part {part.ref} is an unmaterialized crop; configure a part loader"
        )
    try:
        with open(part.ref, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise BackendFailure(f"cannot read image {part.ref}: {exc}") from exc


def _media_type(ref: str) -> str:
    ext = os.path.splitext(ref.split("#")[0])[1].lower()
    return {
        ".jpg": "image/jpeg",
        ".jpeg": "image/jpeg",
        ".gif": "image/gif",
        ".webp": "image/webp",
    }.get(ext, "image/png")


class OpenAICompatibleBackend(ChatBackend):
    """Chat-completions client for any OpenAI-compatible endpoint."""

    def __init__(
        self,
        cfg: BackendConfig,
        transport: Optional[httpx.BaseTransport] = None,
        part_loader: Callable[[ImagePart], bytes] = default_part_loader,
    ):
        self.cfg = cfg
        self.part_loader = part_loader
        self._client = httpx.Client(timeout=cfg.timeout_s, transport=transport)
        self._gate = threading.Semaphore(max(1, cfg.max_concurrency))

    @property
    def backend_id(self) -> str:
        return f"{self.cfg.model or 'unknown'}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _url(self, suffix: str) -> str:
        base = self.cfg.endpoint.rstrip("/")
        if base.endswith(suffix):
            return base
        return base + suffix

    def _post_with_retries(self, url: str, body: dict) -> tuple[dict, int]:
        """POST body as JSON, retrying 429/5xx/timeouts. Returns (json, attempts)."""
        attempts = 0
        last_kind = ""
        last_detail = ""
        while attempts <= self.cfg.retries:
            attempts += 1
            if attempts > 1:
                delay = self.cfg.retry_base_s * self.cfg.retry_factor ** (attempts - 2)
                time.sleep(delay)
            try:
                with self._gate:
                    resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.TimeoutException:
                logger.debug("POST %s attempt %d timed out", url, attempts)
                last_kind, last_detail = "timeout", "request timed out"
                continue
            except httpx.HTTPError as exc:
                raise BackendFailure(f"transport error calling {url}: {type(exc).__name__}") from exc
            status = resp.status_code
            logger.debug("POST %s attempt %d -> %d", url, attempts, status)
            if status in (401, 403):
                raise AuthError(f"{url} rejected credentials (HTTP {status})")
            if status == 429 or status >= 500:
                last_kind, last_detail = "rate", f"HTTP {status}"
                continue
            if status >= 400:
                raise BackendFailure(f"{url} returned HTTP {status}")
            try:
                return resp.json(), attempts
            except (json.JSONDecodeError, ValueError) as exc:
                raise MalformedResponse(f"{url} returned non-JSON body") from exc
        if last_kind == "timeout":
            raise Timeout(f"{url}: {last_detail} after {attempts} attempts")
        raise RateLimited(f"{url}: {last_detail} after {attempts} attempts")

    def _encode_part(self, part: Part) -> dict:
        if isinstance(part, TextPart):
            return {"type": "text", "text": part.text}
        blob = self.part_loader(part)
        b64 = base64.b64encode(blob).decode("ascii")
        url = f"data:{_media_type(part.ref)};base64,{b64}"
        return {"type": "image_url", "image_url": {"url": url}}

    def chat(self, req: ChatRequest) -> ChatResponse:
        body = {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": [self._encode_part(p) for p in req.parts]},
            ],
        }
        if req.deterministic:
            body["temperature"] = 0.0
        if req.max_output is not None:
            body["max_tokens"] = req.max_output
        if req.effort == Effort.HIGH and self.cfg.supports_effort:
            body["reasoning_effort"] = "high"
        start = time.perf_counter()
        payload, attempts = self._post_with_retries(self._url("/chat/completions"), body)
        latency_ms = (time.perf_counter() - start) * 1000.0
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("chat response lacks choices[0].message.content") from exc
        if not isinstance(text, str):
            raise MalformedResponse(f"chat content is {type(text).__name__}, expected str")
        tokens = payload.get("usage") if isinstance(payload.get("usage"), dict) else None
        return ChatResponse(
            text=text,
            meta=ResponseMeta(
                backend_id=self.backend_id,
                latency_ms=latency_ms,
                attempts=attempts,
                effort_honored=_effort_honored(req.effort, self.cfg.supports_effort),
                tokens=tokens,
            ),
        )

    def embed(self, text: str) -> QueryEmbedding:
        body = {"model": self.cfg.model, "text": text}
        payload, _ = self._post_with_retries(self._url("/embed"), body)
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or not vectors:
            raise MalformedResponse("embed response lacks a non-empty 'vectors' list")
        return QueryEmbedding.from_raw(np.asarray(vectors, dtype=np.float64))


ScriptItem = Union[str, Exception]


class ScriptedChatBackend(ChatBackend):
    """Deterministic in-process chat backend.

    script is either a callable(req) -> str or a sequence of responses
    consumed in order; an Exception entry is raised instead of returned.
    Requests are recorded for assertions.
    """

    def __init__(
        self,
        script: Union[Callable[[ChatRequest], str], Sequence[ScriptItem]],
        supports_effort: bool = True,
        backend_id: str = "scripted",
    ):
        self._fn = script if callable(script) else None
        self._queue = None if callable(script) else list(script)
        self.supports_effort = supports_effort
        self.backend_id = backend_id
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def chat(self, req: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        with self._lock:
            self.requests.append(req)
            if self._fn is not None:
                item: ScriptItem = self._fn(req)
            else:
                if not self._queue:
                    raise BackendFailure(f"{self.backend_id}: script exhausted")
                item = self._queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return ChatResponse(
            text=item,
            meta=ResponseMeta(
                backend_id=self.backend_id,
                latency_ms=(time.perf_counter() - start) * 1000.0,
                attempts=1,
                effort_honored=_effort_honored(req.effort, self.supports_effort),
            ),
        )


def _match_rules(rules: list, default: Optional[str], text: str, origin: str) -> str:
    for rule in rules:
        needle = rule.get("contains", "")
        if needle and needle in text:
            return rule["response"]
    if default is not None:
        return default
    raise MissingOfflineResponse(f"{origin}: no rule matches the request")


class OfflineChatBackend(ChatBackend):
    """Chat responses from a JSON rules file.

    File format: {"rules": [{"contains": "<substring>", "response": "..."},
    ...], "default": "..."} -- the first rule whose substring occurs in the
    request text wins. Matching is stateless, so results do not depend on
    call order or concurrency.
    """

    def __init__(self, path: str):
        if not os.path.isfile(path):
            raise MissingFile(f"offline chat store not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        self.rules = doc.get("rules", [])
        self.default = doc.get("default")
        self.supports_effort = bool(doc.get("supports_effort", True))
        self.backend_id = f"offline:{os.path.basename(path)}"
        self.path = path

    def chat(self, req: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        text = _match_rules(self.rules, self.default, req.text_content(), self.path)
        return ChatResponse(
            text=text,
            meta=ResponseMeta(
                backend_id=self.backend_id,
                latency_ms=(time.perf_counter() - start) * 1000.0,
                attempts=1,
                effort_honored=_effort_honored(req.effort, self.supports_effort),
            ),
        )


def query_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class OfflineEmbeddingStore:
    """Query embeddings read from disk, keyed by SHA-256 of the query text."""

    def __init__(self, root: str):
        self.root = root

    def _paths(self, text: str) -> tuple[str, str]:
        digest = query_digest(text)
        return (
            os.path.join(self.root, f"{digest}.emb"),
            os.path.join(self.root, f"{digest}.json"),
        )

    def add(self, text: str, matrix: np.ndarray) -> str:
        """Store an embedding for a query; returns the digest key."""
        os.makedirs(self.root, exist_ok=True)
        emb_path, meta_path = self._paths(text)
        mat = np.asarray(matrix, dtype=np.float32)
        write_emb(emb_path, mat)
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump({"rows": int(mat.shape[0]), "dim": int(mat.shape[1])}, fh)
        return query_digest(text)

    def embed(self, text: str) -> QueryEmbedding:
        emb_path, meta_path = self._paths(text)
        if not (os.path.isfile(emb_path) and os.path.isfile(meta_path)):
            raise MissingOfflineEmbedding(
                f"no stored embedding for query digest {query_digest(text)[:12]}... under {self.root}"
            )
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        return QueryEmbedding.from_raw(read_emb(emb_path, int(meta["dim"])))


class ScriptedEmbedder:
    """In-process embedder: callable(text) -> matrix, or a fixed mapping."""

    def __init__(self, source: Union[Callable[[str], np.ndarray], dict]):
        self._fn = source if callable(source) else None
        self._map = None if callable(source) else dict(source)

    def embed(self, text: str) -> QueryEmbedding:
        if self._fn is not None:
            mat = self._fn(text)
        else:
            if text not in self._map:
                raise MissingOfflineEmbedding(f"no scripted embedding for {text!r}")
            mat = self._map[text]
        return QueryEmbedding.from_raw(np.asarray(mat))


_OCR_SYSTEM = (
    "You transcribe text from images. Output only the text visible in the"
    " image, or an empty string if there is none."
)


class ChatOcr:
    """OCR implemented over any chat backend."""

    def __init__(self, backend: ChatBackend):
        self.backend = backend

    def ocr(self, image) -> str:
        ref = getattr(image, "locator", str(image))
        req = ChatRequest(
            system_prompt=_OCR_SYSTEM,
            parts=[ImagePart(ref=ref), TextPart("Transcribe all text in this image.")],
        )
        return self.backend.chat(req).text


class ScriptedOcr:
    """OCR from a locator -> text mapping (or callable)."""

    def __init__(self, source: Union[Callable[[str], str], dict], default: str = ""):
        self._fn = source if callable(source) else None
        self._map = None if callable(source) else dict(source)
        self.default = default

    def ocr(self, image) -> str:
        ref = getattr(image, "locator", str(image))
        if self._fn is not None:
            return self._fn(ref)
        return self._map.get(ref, self.default)


@dataclass
class BackendSet:
    """Backends by role. Pipelines look up the roles they need."""

    reasoner: Optional[ChatBackend] = None
    keyword_extractor: Optional[ChatBackend] = None
    describer: Optional[ChatBackend] = None
    adjudicator: Optional[ChatBackend] = None
    router: Optional[ChatBackend] = None
    embedder: Optional[object] = None
    ocr: Optional[object] = None

    def require(self, role: str):
        backend = getattr(self, role, None)
        if backend is None:
            raise BackendFailure(f"no '{role}' backend configured")
        return backend
