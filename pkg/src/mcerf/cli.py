"""Command-line surface: build an index, answer one question, run a benchmark.

Three subcommands:

  mcerf index --bundle DIR --out DIR [--force]
  mcerf query --index DIR --question TEXT [--image P ...]
              (--variant V | --router r1|r2) [--offline] [--seed N] ...
  mcerf eval  --index DIR --dataset PATH (--variant V | --router R)
              --out DIR [--jobs N] [--seed N] [--offline] ...

Exit codes: 0 success, 1 pipeline failure (message names the failing
stage), 2 validation or usage error. A JSON config file passed via
--config overrides the corresponding flags. With --offline no network
client is ever constructed; backends resolve to the scripted stores under
--offline-root (chat/<role>.json rule files plus an embeddings/ directory).

Live mode reads the endpoint and model from the config file and pulls the
API key from the env var named by api_key_env (default MCERF_API_KEY).
Quadrant crops are materialized here, not in the engine: a Pillow loader
cuts and bicubic-upscales crops into a temp dir as PNG bytes on demand.
"""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
from typing import Optional

import click
import numpy as np

from .backends import (
    BackendConfig,
    BackendSet,
    ChatOcr,
    ImagePart,
    OfflineChatBackend,
    OfflineEmbeddingStore,
    OpenAICompatibleBackend,
    default_part_loader,
)
from .corpus import BundlePage, EmbeddingBundle, ingest_embeddings, load_corpus, save_corpus
from .errors import McerfError, PipelineFailure, StageError
from .harness import load_dataset, render_table, run_benchmark
from .pipelines import PipelineSettings, QueryTask, Task, Variant, run_variant
from .routing import RouteMode, route_question_r2, route_task_r1
from .util import dump_json_line
from .vision import ImageRef

CHAT_ROLES = ("reasoner", "keyword_extractor", "describer", "adjudicator", "router")


def _fail(code: int, message: str) -> None:
    click.echo(message, err=True)
    sys.exit(code)


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(2, f"config: {exc}")
    if not isinstance(cfg, dict):
        _fail(2, "config: top level must be a JSON object")
    return cfg


def _cfg(cfg: dict, key: str, flag_value):
    """Config file wins over the flag when both are present."""
    return cfg.get(key, flag_value)


def _pillow_part_loader(tmp_dir: str):
    """Materialize crop parts with Pillow: cut the quadrant, upscale with
    bicubic resampling, park the PNG in tmp_dir, return its bytes."""

    def load(part: ImagePart) -> bytes:
        if part.data is not None or part.crop is None:
            return default_part_loader(part)
        from PIL import Image

        spec = part.crop
        src = part.ref.split("#", 1)[0]
        with Image.open(src) as img:
            box = (
                spec.origin_x,
                spec.origin_y,
                spec.origin_x + spec.crop_w,
                spec.origin_y + spec.crop_h,
            )
            crop = img.crop(box)
            target = (math.ceil(spec.scaled_w), math.ceil(spec.scaled_h))
            if target != (spec.crop_w, spec.crop_h):
                crop = crop.resize(target, Image.BICUBIC)
            name = part.ref.replace("/", "_").replace("#", "_") + ".png"
            out_path = os.path.join(tmp_dir, name)
            crop.save(out_path, format="PNG")
        with open(out_path, "rb") as fh:
            return fh.read()

    return load


def _probe_image(path: str) -> tuple[int, int]:
    try:
        from PIL import Image

        with Image.open(path) as img:
            return img.width, img.height
    except Exception:
        return 0, 0


def _build_backends(cfg: dict, offline: bool, offline_root: Optional[str]) -> BackendSet:
    if offline:
        if cfg.get("endpoint"):
            raise McerfError("offline run must not bind a network endpoint")
        if not offline_root or not os.path.isdir(offline_root):
            raise McerfError(f"offline root not found: {offline_root}")
        chat_dir = os.path.join(offline_root, "chat")

        def role(name: str):
            p = os.path.join(chat_dir, f"{name}.json")
            return OfflineChatBackend(p) if os.path.isfile(p) else None

        emb_dir = os.path.join(offline_root, "embeddings")
        ocr_backend = role("ocr")
        return BackendSet(
            reasoner=role("reasoner"),
            keyword_extractor=role("keyword_extractor"),
            describer=role("describer"),
            adjudicator=role("adjudicator"),
            router=role("router"),
            embedder=OfflineEmbeddingStore(emb_dir) if os.path.isdir(emb_dir) else None,
            ocr=ChatOcr(ocr_backend) if ocr_backend else None,
        )

    endpoint = cfg.get("endpoint")
    model = cfg.get("model")
    if not endpoint or not model:
        raise McerfError("live mode needs endpoint and model in the config file")
    tmp_dir = tempfile.mkdtemp(prefix="mcerf_crops_")
    base = BackendConfig(
        endpoint=endpoint,
        model=model,
        api_key_env=cfg.get("api_key_env", "MCERF_API_KEY"),
        timeout_s=float(cfg.get("timeout_s", 60)),
        retries=int(cfg.get("retries", 2)),
        supports_effort=bool(cfg.get("supports_effort", True)),
        max_concurrency=int(cfg.get("max_concurrency", 4)),
    )
    backend = OpenAICompatibleBackend(base, part_loader=_pillow_part_loader(tmp_dir))
    return BackendSet(
        reasoner=backend,
        keyword_extractor=backend,
        describer=backend,
        adjudicator=backend,
        router=backend,
        embedder=backend,
        ocr=ChatOcr(backend),
    )


def _settings(cfg: dict, k: int, fraction: float, budget: int) -> PipelineSettings:
    return PipelineSettings(
        k=int(_cfg(cfg, "k", k)),
        fraction=float(_cfg(cfg, "fraction", fraction)),
        budget=int(_cfg(cfg, "budget", budget)),
        prefilter_m=cfg.get("prefilter_m"),
    )


@click.group()
def main() -> None:
    """Multi-vector document QA: index, query, and benchmark."""


@main.command("index")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path(), help="Bundle directory (bundle.json plus .npy matrices).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Index directory to write.")
@click.option("--force", is_flag=True, help="Overwrite an existing index.")
def cmd_index(bundle_dir: str, out_dir: str, force: bool) -> None:
    """Build an index directory from an embedding bundle."""
    manifest_path = os.path.join(bundle_dir, "bundle.json")
    if not os.path.isfile(manifest_path):
        _fail(2, f"no bundle.json under {bundle_dir}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        pages = []
        for entry in doc.get("pages", []):
            mat = np.load(os.path.join(bundle_dir, entry["embeddings"]))
            text = entry.get("text", "")
            if "text_file" in entry:
                with open(os.path.join(bundle_dir, entry["text_file"]), "r", encoding="utf-8") as tf:
                    text = tf.read()
            pages.append(
                BundlePage(
                    page_id=entry["page_id"],
                    embeddings=mat,
                    text=text,
                    image_ref=entry.get("image_ref", ""),
                )
            )
        bundle = EmbeddingBundle(pages=pages, source=doc.get("source", bundle_dir))
        corpus = ingest_embeddings(bundle)
        save_corpus(corpus, out_dir, force=force)
    except McerfError as exc:
        _fail(2, f"{type(exc).__name__}: {exc}")
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        _fail(2, f"bad bundle: {exc}")
    counts = [p.n_patches for p in corpus.pages]
    click.echo(
        f"indexed {corpus.n_pages} pages dim={corpus.dim} "
        f"patches min={min(counts)} max={max(counts)} total={sum(counts)}"
    )


def _one_of_variant_router(variant: Optional[str], router: Optional[str]) -> None:
    if (variant is None) == (router is None):
        raise click.UsageError("pass exactly one of --variant or --router")


@main.command("query")
@click.option("--index", "index_dir", required=True, type=click.Path())
@click.option("--question", required=True)
@click.option("--image", "images", multiple=True, type=click.Path())
@click.option("--task", default="retrieval", type=click.Choice([t.value for t in Task]))
@click.option("--variant", default=None, type=click.Choice([v.value for v in Variant]))
@click.option("--router", default=None, type=click.Choice(["r1", "r2"]))
@click.option("--dataset", default=None, type=click.Path(), help="Sampling pool, required with --router r1.")
@click.option("--offline", is_flag=True)
@click.option("--offline-root", default=None, type=click.Path())
@click.option("--seed", default=0, type=int)
@click.option("--k", default=5, type=int)
@click.option("--fraction", default=0.55, type=float)
@click.option("--budget", default=4, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "trace_path", default=None, type=click.Path(), help="Trace JSON-lines path (temp file by default).")
def cmd_query(
    index_dir: str,
    question: str,
    images: tuple,
    task: str,
    variant: Optional[str],
    router: Optional[str],
    dataset: Optional[str],
    offline: bool,
    offline_root: Optional[str],
    seed: int,
    k: int,
    fraction: float,
    budget: int,
    config_path: Optional[str],
    trace_path: Optional[str],
) -> None:
    """Answer one question against an index."""
    _one_of_variant_router(variant, router)
    if router == "r1" and dataset is None:
        raise click.UsageError("--router r1 needs --dataset to sample routing questions")
    cfg = _load_config(config_path)
    offline = bool(_cfg(cfg, "offline", offline))
    offline_root = _cfg(cfg, "offline_root", offline_root)
    seed = int(_cfg(cfg, "seed", seed))
    refs = []
    for path in images:
        width, height = _probe_image(path)
        refs.append(ImageRef(locator=path, width=width, height=height))
    q = QueryTask(qid="q0", task=Task(task), question=question, images=refs, ground_truth=None)
    try:
        corpus = load_corpus(index_dir)
        backends = _build_backends(cfg, offline, offline_root)
        settings = _settings(cfg, k, fraction, budget)
    except McerfError as exc:
        _fail(2, f"{type(exc).__name__}: {exc}")
    try:
        if router == "r2":
            out, _state = route_question_r2(q, corpus, backends, settings)
        elif router == "r1":
            pool = [t for t in load_dataset(dataset, probe=_probe_image) if t.task == q.task]
            decision = route_task_r1(task, pool, backends, seed=seed)
            click.echo(f"route: {decision.variant.value} ({decision.reason})")
            out = run_variant(decision.variant, q, corpus, backends, settings)
        else:
            out = run_variant(variant, q, corpus, backends, settings)
    except (PipelineFailure, StageError) as exc:
        stage = getattr(exc, "stage", "")
        where = f" at {stage}" if stage else ""
        _fail(1, f"{type(exc).__name__}{where}: {exc}")
    except McerfError as exc:
        _fail(1, f"{type(exc).__name__}: {exc}")
    if trace_path is None:
        fd, trace_path = tempfile.mkstemp(prefix="mcerf_trace_", suffix=".jsonl")
        os.close(fd)
    with open(trace_path, "w", encoding="utf-8") as fh:
        for event in out.trace:
            fh.write(dump_json_line(event.to_dict()) + "\n")
    click.echo(f"answer: {out.answer}")
    click.echo("cited: " + ", ".join(f"{c.page_id}[{c.channel}]" for c in out.cited_pages))
    click.echo(f"trace: {trace_path}")


@main.command("eval")
@click.option("--index", "index_dir", required=True, type=click.Path())
@click.option("--dataset", required=True, type=click.Path())
@click.option("--variant", default=None, type=click.Choice([v.value for v in Variant]))
@click.option("--router", default=None, type=click.Choice(["r1", "r2"]))
@click.option("--jobs", default=None, type=int, help="Worker threads (default: cores, capped at 4).")
@click.option("--seed", default=0, type=int)
@click.option("--offline", is_flag=True)
@click.option("--offline-root", default=None, type=click.Path())
@click.option("--route-mode", default="vlm", type=click.Choice(["vlm", "ocr"]))
@click.option("--k", default=5, type=int)
@click.option("--fraction", default=0.55, type=float)
@click.option("--budget", default=4, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_eval(
    index_dir: str,
    dataset: str,
    variant: Optional[str],
    router: Optional[str],
    jobs: Optional[int],
    seed: int,
    offline: bool,
    offline_root: Optional[str],
    route_mode: str,
    k: int,
    fraction: float,
    budget: int,
    config_path: Optional[str],
    out_dir: str,
) -> None:
    """Run a dataset through a variant or router and write reports."""
    _one_of_variant_router(variant, router)
    cfg = _load_config(config_path)
    offline = bool(_cfg(cfg, "offline", offline))
    offline_root = _cfg(cfg, "offline_root", offline_root)
    seed = int(_cfg(cfg, "seed", seed))
    if jobs is None:
        jobs = int(cfg.get("jobs", min(os.cpu_count() or 1, 4)))
    else:
        jobs = int(_cfg(cfg, "jobs", jobs))
    try:
        corpus = load_corpus(index_dir)
        questions = load_dataset(dataset, probe=_probe_image)
        backends = _build_backends(cfg, offline, offline_root)
        settings = _settings(cfg, k, fraction, budget)
    except McerfError as exc:
        _fail(2, f"{type(exc).__name__}: {exc}")
    try:
        report, _rows = run_benchmark(
            questions,
            corpus,
            backends,
            variant=variant,
            router=router,
            settings=settings,
            seed=seed,
            jobs=max(1, jobs),
            mode=RouteMode(route_mode),
            out_dir=out_dir,
        )
    except ValueError as exc:
        _fail(2, str(exc))
    except McerfError as exc:
        _fail(1, f"{type(exc).__name__}: {exc}")
    click.echo(render_table(report))
    click.echo(f"report: {os.path.join(out_dir, 'report.json')}")


if __name__ == "__main__":
    main()
