"""Answer-scoring metrics, one per task family.

  retrieval                 f1_bow   multiset F1 over normalized words
  compilation               f1_rules set F1 over extracted rule identifiers
  definition                f1_boc   multiset F1 over characters (max over
                                     ground-truth alternatives)
  presence / dimension /
  functional_performance    exact yes-no label match via parse_yesno

Normalization everywhere: lowercase, punctuation stripped, whitespace
tokenized. All scores lie in [0, 1]; comparing a non-empty answer with
itself gives 1.0 and with an empty string gives 0.0. bleu2 and rouge_l are
auxiliary report metrics for explanation-style answers.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .errors import EmptySubset, WrongTaskForMetric
from .keywords import RULE_ID_RE

YESNO_TASKS = ("presence", "dimension", "functional_performance")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_words(text: str) -> list[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


def _multiset_f1(pred: Counter, gt: Counter) -> float:
    if not pred and not gt:
        return 1.0
    if not pred or not gt:
        return 0.0
    overlap = sum((pred & gt).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(pred.values())
    recall = overlap / sum(gt.values())
    return 2 * precision * recall / (precision + recall)


def f1_bow(pred: str, gt: str) -> float:
    """Bag-of-words F1 between normalized word multisets."""
    return _multiset_f1(Counter(normalize_words(pred)), Counter(normalize_words(gt)))


def extract_rule_ids(text: str, pattern: re.Pattern = RULE_ID_RE) -> set:
    """All rule identifiers in the text, as an exact-string set."""
    return set(pattern.findall(text))


def f1_rules(pred: str, gt: str, pattern: re.Pattern = RULE_ID_RE) -> float:
    """Set F1 over extracted rule identifiers; sub-rules never match parents."""
    pred_ids = extract_rule_ids(pred, pattern)
    gt_ids = extract_rule_ids(gt, pattern)
    if not pred_ids and not gt_ids:
        return 1.0
    if not pred_ids or not gt_ids:
        return 0.0
    overlap = len(pred_ids & gt_ids)
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_ids)
    recall = overlap / len(gt_ids)
    return 2 * precision * recall / (precision + recall)


def _char_counts(text: str) -> Counter:
    return Counter(c for c in text.lower() if c.isalnum())


def f1_boc(pred: str, gt: Union[str, Sequence[str]]) -> float:
    """Bag-of-characters F1; list-valued ground truth scores the best alternative."""
    if not isinstance(gt, str):
        alternatives = list(gt)
        if not alternatives:
            return 0.0
        return max(f1_boc(pred, alt) for alt in alternatives)
    return _multiset_f1(_char_counts(pred), _char_counts(gt))


_ANSWER_RE = re.compile(r"answer\s*:\s*(yes|no)\b", re.IGNORECASE)
_STANDALONE_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_yesno(pred: str) -> Optional[str]:
    """Extract a yes/no label, or None when no label can be read.

    The final "answer: yes|no" wins; failing that, the text must mention
    exactly one of the two words (any number of times) to count.
    """
    labeled = _ANSWER_RE.findall(pred)
    if labeled:
        return labeled[-1].lower()
    kinds = {m.lower() for m in _STANDALONE_RE.findall(pred)}
    if len(kinds) == 1:
        return next(iter(kinds))
    return None


@dataclass
class EvalExample:
    qid: str
    task: str
    pred: str
    gt: Union[str, list]


def yesno_accuracy(examples: Sequence[EvalExample]) -> float:
    """Share of examples whose predicted label equals the ground-truth label.

    Only defined for the yes/no tasks; unparseable predictions count as
    wrong. An empty subset is an error, not a score.
    """
    if not examples:
        raise EmptySubset("no examples to score")
    for ex in examples:
        if ex.task not in YESNO_TASKS:
            raise WrongTaskForMetric(f"{ex.qid}: task {ex.task!r} is not a yes/no task")
    hits = 0
    for ex in examples:
        gt = ex.gt if isinstance(ex.gt, str) else (ex.gt[0] if ex.gt else "")
        label = parse_yesno(ex.pred)
        if label is not None and label == parse_yesno(gt):
            hits += 1
    return hits / len(examples)


_BLEU_EPS = 1e-9


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu2(pred: str, ref: str) -> float:
    """Sentence BLEU with 1- and 2-gram precisions and a brevity penalty.

    Zero clipped-match counts are smoothed to 1e-9 so near-misses score
    small but positive; an order with no possible n-grams (one-word
    candidate) is skipped rather than zeroing the geometric mean.
    """
    pred_tokens = normalize_words(pred)
    ref_tokens = normalize_words(ref)
    if not pred_tokens and not ref_tokens:
        return 1.0
    if not pred_tokens or not ref_tokens:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in (1, 2):
        possible = len(pred_tokens) - n + 1
        if possible < 1:
            continue
        matches = sum(
            (_ngram_counts(pred_tokens, n) & _ngram_counts(ref_tokens, n)).values()
        )
        log_sum += math.log(max(matches, _BLEU_EPS) / possible)
        orders += 1
    precision = math.exp(log_sum / orders)
    c, r = len(pred_tokens), len(ref_tokens)
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return brevity * precision


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Classic quadratic longest-common-subsequence length."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def rouge_l(pred: str, ref: str) -> float:
    """LCS-based F measure (beta = 1) over normalized word tokens."""
    pred_tokens = normalize_words(pred)
    ref_tokens = normalize_words(ref)
    if not pred_tokens and not ref_tokens:
        return 1.0
    if not pred_tokens or not ref_tokens:
        return 0.0
    lcs = lcs_length(pred_tokens, ref_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred_tokens)
    recall = lcs / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def score_example(task: str, pred: str, gt: Union[str, list]) -> float:
    """Route one prediction to its task's metric."""
    if task == "retrieval":
        return f1_bow(pred, gt if isinstance(gt, str) else " ".join(gt))
    if task == "compilation":
        return f1_rules(pred, gt if isinstance(gt, str) else ", ".join(gt))
    if task == "definition":
        return f1_boc(pred, gt)
    if task in YESNO_TASKS:
        gt_text = gt if isinstance(gt, str) else (gt[0] if gt else "")
        label = parse_yesno(pred)
        return 1.0 if label is not None and label == parse_yesno(gt_text) else 0.0
    raise WrongTaskForMetric(f"no metric for task {task!r}")
