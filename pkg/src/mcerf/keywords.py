"""Keyword extraction and lexical page search.

Extraction asks a chat backend for the question's critical terms (one per
line); if the backend fails or returns nothing, a heuristic keeps every
rule-identifier-shaped token plus the remaining tokens of length >= 4 that
are not on the fixed stopword list (resources/stopwords.txt).

Lexical search is BM25 over page text:

    score(q, d) = sum_t idf(t) * tf / (tf + k1 * (1 - b + b * |d| / avgdl))
    idf(t)      = ln((N - df(t) + 0.5) / (df(t) + 0.5) + 1)

with k1 = 1.5 and b = 0.75 by default. The +1 inside the log keeps idf
positive even for terms present in every document.

hybrid_merge fuses a semantic and a lexical ranking by alternating heads,
semantic first; a duplicate page consumes its channel's turn.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .backends import ChatBackend, ChatRequest, TextPart
from .corpus import Corpus
from .errors import EmptyQuestion, MLessThanK
from .prompts import load_prompt, load_stopwords
from .retrieval import LEXICAL, RetrievalHit

# Rule identifiers: one or two letters, one or more dot-separated numeric
# parts, then optionally a single lowercase letter (dotted or attached):
# V.1.2, T.7, F.11.2.1.a, T.7.7.1a, AA.1.1.1.
RULE_ID_RE = re.compile(r"\b[A-Z]{1,2}(?:\.\d+)+(?:\.?[a-z])?\b")
_RULE_TOKEN_RE = re.compile(r"[a-z]{1,2}(?:\.\d+)+(?:\.?[a-z])?$")
_TOKEN_RE = re.compile(r"[a-z]{1,2}(?:\.\d+)+(?:\.?[a-z])?|[a-z0-9]+")

MIN_KEYWORD_LEN = 4


class KeywordSource(str, Enum):
    LLM = "llm"
    HEURISTIC = "heuristic"


@dataclass
class KeywordSet:
    terms: list[str]
    source: KeywordSource


def tokenize(text: str) -> list[str]:
    """Lowercase tokens; dots are kept only inside rule-identifier-shaped tokens."""
    return _TOKEN_RE.findall(text.lower())


def is_rule_token(token: str) -> bool:
    return bool(_RULE_TOKEN_RE.match(token))


def _dedupe(terms: list[str]) -> list[str]:
    seen = set()
    out = []
    for t in terms:
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def heuristic_keywords(question: str) -> KeywordSet:
    if not question or not question.strip():
        raise EmptyQuestion("question is empty")
    stopwords = load_stopwords()
    kept = []
    for token in tokenize(question):
        if is_rule_token(token):
            kept.append(token)
        elif len(token) >= MIN_KEYWORD_LEN and token not in stopwords:
            kept.append(token)
    return KeywordSet(terms=_dedupe(kept), source=KeywordSource.HEURISTIC)


def extract_keywords(
    question: str,
    backend: Optional[ChatBackend],
    responses: Optional[list] = None,
) -> KeywordSet:
    """Backend-extracted terms, falling back to the heuristic on any failure.

    When a list is passed as responses, the raw ChatResponse of a successful
    backend call is appended to it so callers can log the call.
    """
    if not question or not question.strip():
        raise EmptyQuestion("question is empty")
    if backend is None:
        return heuristic_keywords(question)
    req = ChatRequest(
        system_prompt=load_prompt("keyword_extract"),
        parts=[TextPart(question, tag="question")],
    )
    try:
        resp = backend.chat(req)
        text = resp.text
        if responses is not None:
            responses.append(resp)
    except Exception:
        return heuristic_keywords(question)
    terms = _dedupe([line.strip().lower() for line in text.splitlines() if line.strip()])
    if not terms:
        return heuristic_keywords(question)
    return KeywordSet(terms=terms, source=KeywordSource.LLM)


@dataclass
class Bm25Index:
    k1: float
    b: float
    doc_count: int
    avg_doc_len: float
    doc_lens: dict = field(default_factory=dict)
    df: dict = field(default_factory=dict)
    postings: dict = field(default_factory=dict)

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        if df == 0:
            return 0.0
        return math.log((self.doc_count - df + 0.5) / (df + 0.5) + 1.0)


def build_bm25(corpus: Corpus, k1: float = 1.5, b: float = 0.75) -> Bm25Index:
    doc_lens = {}
    df: Counter = Counter()
    postings: dict = {}
    for page in corpus.pages:
        tokens = tokenize(page.text)
        doc_lens[page.page_id] = len(tokens)
        counts = Counter(tokens)
        for term, tf in counts.items():
            df[term] += 1
            postings.setdefault(term, []).append((page.page_id, tf))
    for plist in postings.values():
        plist.sort()
    n = len(corpus.pages)
    avg = (sum(doc_lens.values()) / n) if n else 0.0
    return Bm25Index(
        k1=k1,
        b=b,
        doc_count=n,
        avg_doc_len=avg,
        doc_lens=doc_lens,
        df=dict(df),
        postings=postings,
    )


def bm25_rank(keywords: KeywordSet, index: Bm25Index, k: int) -> list[RetrievalHit]:
    """Pages scoring > 0 for any keyword, best first, ties by page_id ascending."""
    if k < 1:
        raise MLessThanK(f"k must be >= 1, got {k}")
    scores: dict = {}
    for term in keywords.terms:
        idf = index.idf(term)
        if idf == 0.0:
            continue
        for page_id, tf in index.postings.get(term, []):
            dl = index.doc_lens[page_id]
            denom = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_len)
            scores[page_id] = scores.get(page_id, 0.0) + idf * tf / denom
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return [
        RetrievalHit(page_id=pid, score=score, channel=LEXICAL)
        for pid, score in ranked[:k]
        if score > 0.0
    ]


def hybrid_merge(
    semantic: list[RetrievalHit], lexical: list[RetrievalHit], k: int
) -> list[RetrievalHit]:
    """Interleave the two rankings, semantic head first, de-duplicated, up to k.

    Channels strictly alternate; a page already taken consumes its channel's
    turn without contributing. When one channel runs out, the other fills
    the remaining slots.
    """
    if k < 1:
        raise MLessThanK(f"k must be >= 1, got {k}")
    sem = list(semantic)
    lex = list(lexical)
    out: list[RetrievalHit] = []
    taken: set = set()
    sem_turn = True
    while len(out) < k and (sem or lex):
        queue = sem if sem_turn else lex
        if not queue:
            queue = lex if sem_turn else sem
        hit = queue.pop(0)
        if hit.page_id not in taken:
            taken.add(hit.page_id)
            out.append(hit)
        sem_turn = not sem_turn
    return out
