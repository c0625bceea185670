"""Benchmark harness: load a dataset, answer it, score it, write reports.

Datasets are JSON-lines; each record holds qid, task, question, images[],
and ground_truth (a string, or a list of acceptable strings). An image
entry is either a plain locator string or {"ref": ..., "width": ...,
"height": ...} when the caller already knows the pixel size; widths stay 0
for plain refs unless a probe callback is supplied.

run_benchmark answers every question with a fixed variant, the task-level
router, or the per-question supervisor. Failures never abort a run: the
question scores 0 and the error lands in the report's failure list.
Output files (predictions.jsonl, report.json, routes.jsonl, table.txt) are
byte-stable for a given dataset, seed, and scripted backends; rows are
written in dataset order no matter how many worker threads run.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .backends import BackendSet
from .corpus import Corpus
from .errors import DatasetError, McerfError
from .keywords import build_bm25
from .metrics import bleu2, rouge_l, score_example
from .pipelines import (
    PipelineSettings,
    QueryTask,
    Task,
    Variant,
    run_variant,
)
from .routing import RouteDecision, RouteMode, route_question_r2, route_task_r1
from .util import dump_json_line
from .vision import ImageRef

TASK_ORDER = (
    "retrieval",
    "compilation",
    "definition",
    "presence",
    "dimension",
    "functional_performance",
)

TASK_METRIC_LABEL = {
    "retrieval": "F1 BoW",
    "compilation": "F1 rules",
    "definition": "F1 BoC",
    "presence": "ACC",
    "dimension": "ACC",
    "functional_performance": "ACC",
}

AUX_TASKS = ("dimension", "functional_performance")


def _parse_image(entry, probe: Optional[Callable]) -> ImageRef:
    if isinstance(entry, str):
        if probe is not None:
            width, height = probe(entry)
        else:
            width = height = 0
        return ImageRef(locator=entry, width=int(width), height=int(height))
    if isinstance(entry, dict):
        ref = entry.get("ref") or entry.get("locator") or entry.get("path") or ""
        return ImageRef(
            locator=str(ref),
            width=int(entry.get("width", 0)),
            height=int(entry.get("height", 0)),
        )
    raise DatasetError(f"image entry must be a string or object, got {type(entry).__name__}")


def load_dataset(path: str, probe: Optional[Callable] = None) -> list[QueryTask]:
    """Read a JSON-lines dataset into QueryTask records."""
    if not os.path.isfile(path):
        raise DatasetError(f"dataset not found: {path}")
    tasks = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            try:
                task = Task(doc["task"])
            except (KeyError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad or missing task") from exc
            if "question" not in doc or not isinstance(doc["question"], str):
                raise DatasetError(f"{path}:{lineno}: missing question text")
            gt = doc.get("ground_truth")
            if gt is not None and not isinstance(gt, (str, list)):
                raise DatasetError(f"{path}:{lineno}: ground_truth must be string or list")
            tasks.append(
                QueryTask(
                    qid=str(doc.get("qid", f"q{lineno:04d}")),
                    task=task,
                    question=doc["question"],
                    images=[_parse_image(e, probe) for e in doc.get("images", [])],
                    ground_truth=gt,
                )
            )
    return tasks


_IMPORT_QUESTION_KEYS = ("question", "prompt", "query")
_IMPORT_GT_KEYS = ("ground_truth", "answer", "gt", "label")
_IMPORT_IMAGE_KEYS = ("images", "image", "image_path", "image_paths")
_IMPORT_TASK_KEYS = ("task", "subset", "category")
_IMPORT_QID_KEYS = ("qid", "id", "question_id", "index")

_TASK_HINTS = {
    "retrieval": "retrieval",
    "compilation": "compilation",
    "definition": "definition",
    "presence": "presence",
    "dimension": "dimension",
    "functional": "functional_performance",
}


def _infer_task(value: str) -> Optional[str]:
    low = value.lower()
    for hint, task in _TASK_HINTS.items():
        if hint in low:
            return task
    return None


def import_dataset(src: str, dst: str, task: Optional[str] = None) -> int:
    """Convert a released QA file (JSON-lines or a JSON array) to the native
    schema. Field names are matched leniently; the task comes from the
    record, the task argument, or the source filename, in that order.
    Returns the number of records written."""
    if not os.path.isfile(src):
        raise DatasetError(f"import source not found: {src}")
    with open(src, "r", encoding="utf-8") as fh:
        head = fh.read().lstrip()
    try:
        if head.startswith("["):
            records = json.loads(head)
        else:
            records = [json.loads(line) for line in head.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{src}: not valid JSON or JSON-lines: {exc}") from exc
    fallback_task = task or _infer_task(os.path.basename(src))
    rows = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise DatasetError(f"{src}: record {i} is not an object")
        question = next((rec[k] for k in _IMPORT_QUESTION_KEYS if k in rec), None)
        if question is None:
            raise DatasetError(f"{src}: record {i} has no question field")
        rec_task = next((rec[k] for k in _IMPORT_TASK_KEYS if k in rec), None)
        rec_task = (_infer_task(str(rec_task)) if rec_task else None) or fallback_task
        if rec_task is None:
            raise DatasetError(f"{src}: record {i} has no recognizable task")
        gt = next((rec[k] for k in _IMPORT_GT_KEYS if k in rec), None)
        images = next((rec[k] for k in _IMPORT_IMAGE_KEYS if k in rec), [])
        if isinstance(images, str):
            images = [images] if images else []
        qid = next((str(rec[k]) for k in _IMPORT_QID_KEYS if k in rec), f"q{i:04d}")
        rows.append(
            {
                "qid": qid,
                "task": rec_task,
                "question": question,
                "images": images,
                "ground_truth": gt,
            }
        )
    with open(dst, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dump_json_line(row) + "\n")
    return len(rows)


@dataclass
class MetricReport:
    per_question: dict = field(default_factory=dict)
    per_task: dict = field(default_factory=dict)
    overall: float = 0.0
    aux: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    n_questions: int = 0

    def to_dict(self) -> dict:
        return {
            "per_question": self.per_question,
            "per_task": self.per_task,
            "overall": self.overall,
            "aux": self.aux,
            "failures": self.failures,
            "n_questions": self.n_questions,
        }


def render_table(report: MetricReport) -> str:
    """Plain-text score table, one row per task subset."""
    lines = [f"{'Task':<26}{'Metric':<10}{'Score':>8}{'N':>6}"]
    for task in TASK_ORDER:
        if task not in report.per_task:
            continue
        n = report.aux.get("subset_sizes", {}).get(task, 0)
        lines.append(
            f"{task:<26}{TASK_METRIC_LABEL[task]:<10}{report.per_task[task]:>8.3f}{n:>6}"
        )
    lines.append(f"{'overall':<26}{'':<10}{report.overall:>8.3f}{report.n_questions:>6}")
    lines.append(f"failures: {len(report.failures)}")
    return "\n".join(lines)


def run_benchmark(
    dataset: list[QueryTask],
    corpus: Corpus,
    backends: BackendSet,
    variant: Optional[Union[Variant, str]] = None,
    router: Optional[str] = None,
    settings: Optional[PipelineSettings] = None,
    seed: int = 0,
    jobs: int = 1,
    mode: RouteMode = RouteMode.VLM,
    out_dir: Optional[str] = None,
) -> tuple[MetricReport, list[dict]]:
    """Answer and score a dataset. Exactly one of variant/router must be set."""
    if (variant is None) == (router is None):
        raise ValueError("pass exactly one of variant or router")
    if router is not None and router not in ("r1", "r2"):
        raise ValueError(f"router must be 'r1' or 'r2', got {router!r}")
    settings = settings or PipelineSettings()
    bm25 = build_bm25(corpus)
    route_log: list[dict] = []

    plan: dict[str, Variant] = {}
    if variant is not None:
        chosen = Variant(variant)
        plan = {q.qid: chosen for q in dataset}
    elif router == "r1":
        by_task: dict[str, list[QueryTask]] = {}
        for q in dataset:
            by_task.setdefault(q.task.value, []).append(q)
        for task in sorted(by_task):
            decision = route_task_r1(task, by_task[task], backends, seed=seed, mode=mode)
            route_log.append({"task": task, **decision.to_dict()})
            for q in by_task[task]:
                plan[q.qid] = decision.variant

    def answer_one(q: QueryTask) -> dict:
        row: dict = {"qid": q.qid, "task": q.task.value}
        try:
            if router == "r2":
                out, state = route_question_r2(q, corpus, backends, settings, bm25=bm25)
                row["route"] = {
                    "variant": out.variant.value,
                    "steps": [f"{r.agent}.{r.function}" for r in state.transcript],
                }
            else:
                out = run_variant(plan[q.qid], q, corpus, backends, settings, bm25=bm25)
            row["variant"] = out.variant.value
            row["answer"] = out.answer
            row["cited_pages"] = [c.to_dict() for c in out.cited_pages]
            if q.ground_truth is None:
                row["score"] = None
            else:
                row["score"] = score_example(q.task.value, out.answer, q.ground_truth)
        except Exception as exc:
            row["variant"] = plan.get(q.qid, Variant.MAIN).value if router != "r2" else ""
            row["answer"] = ""
            row["cited_pages"] = []
            row["score"] = 0.0
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(answer_one, dataset))
    else:
        rows = [answer_one(q) for q in dataset]

    report = _aggregate(dataset, rows)
    if router == "r2":
        for row in rows:
            if "route" in row:
                route_log.append({"qid": row["qid"], **row.pop("route")})
            else:
                route_log.append({"qid": row["qid"], "variant": row["variant"], "steps": []})
    if out_dir is not None:
        _write_outputs(report, rows, route_log, out_dir, wrote_routes=router is not None)
    return report, rows


def _aggregate(dataset: list[QueryTask], rows: list[dict]) -> MetricReport:
    per_question = {}
    by_task: dict[str, list[float]] = {}
    failures = []
    aux_scores: dict[str, dict[str, list[float]]] = {}
    gt_by_qid = {q.qid: q.ground_truth for q in dataset}
    task_by_qid = {q.qid: q.task.value for q in dataset}
    subset_sizes: dict[str, int] = {}
    for row in rows:
        qid = row["qid"]
        task = task_by_qid[qid]
        subset_sizes[task] = subset_sizes.get(task, 0) + 1
        if "error" in row:
            failures.append({"qid": qid, "error": row["error"]})
        score = row.get("score")
        per_question[qid] = score
        if score is not None:
            by_task.setdefault(task, []).append(score)
        gt = gt_by_qid[qid]
        if task in AUX_TASKS and gt is not None and "error" not in row:
            gt_text = gt if isinstance(gt, str) else (gt[0] if gt else "")
            aux_scores.setdefault(task, {"bleu2": [], "rouge_l": []})
            aux_scores[task]["bleu2"].append(bleu2(row["answer"], gt_text))
            aux_scores[task]["rouge_l"].append(rouge_l(row["answer"], gt_text))
    per_task = {task: sum(vals) / len(vals) for task, vals in by_task.items()}
    overall = sum(per_task.values()) / len(per_task) if per_task else 0.0
    aux: dict = {
        task: {name: sum(vals) / len(vals) for name, vals in metrics.items() if vals}
        for task, metrics in aux_scores.items()
    }
    aux["subset_sizes"] = subset_sizes
    return MetricReport(
        per_question=per_question,
        per_task=per_task,
        overall=overall,
        aux=aux,
        failures=failures,
        n_questions=len(rows),
    )


def _write_outputs(
    report: MetricReport,
    rows: list[dict],
    route_log: list[dict],
    out_dir: str,
    wrote_routes: bool,
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "predictions.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dump_json_line(row) + "\n")
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_table(report) + "\n")
    if wrote_routes:
        with open(os.path.join(out_dir, "routes.jsonl"), "w", encoding="utf-8") as fh:
            for entry in route_log:
                fh.write(dump_json_line(entry) + "\n")
