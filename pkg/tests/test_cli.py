from __future__ import annotations

import json
import os
import socket

import numpy as np
import pytest
from click.testing import CliRunner

from mcerf.cli import main
from mcerf.golden import GOLDEN_QUESTIONS

from conftest import random_matrices


@pytest.fixture()
def runner():
    return CliRunner()


def offline_args(paths):
    return ["--offline", "--offline-root", paths["offline_root"]]


def write_bundle(bundle_dir, matrices, page_ids=None):
    os.makedirs(bundle_dir, exist_ok=True)
    pages = []
    for i, mat in enumerate(matrices):
        pid = page_ids[i] if page_ids else f"p{i:03d}"
        np.save(os.path.join(bundle_dir, f"{pid}.npy"), mat)
        pages.append({"page_id": pid, "embeddings": f"{pid}.npy", "text": f"page {pid}"})
    with open(os.path.join(bundle_dir, "bundle.json"), "w") as fh:
        json.dump({"source": "test", "pages": pages}, fh)
    return str(bundle_dir)


def test_index_builds_and_summarizes(runner, tmp_path):
    bundle = write_bundle(tmp_path / "bundle", random_matrices(3, 4, 8, seed=0))
    out = str(tmp_path / "index")
    result = runner.invoke(main, ["index", "--bundle", bundle, "--out", out])
    assert result.exit_code == 0, result.output
    assert "indexed 3 pages dim=8" in result.output
    assert os.path.isfile(os.path.join(out, "manifest.json"))


def test_index_refuses_overwrite_without_force(runner, tmp_path):
    bundle = write_bundle(tmp_path / "bundle", random_matrices(2, 3, 4, seed=1))
    out = str(tmp_path / "index")
    assert runner.invoke(main, ["index", "--bundle", bundle, "--out", out]).exit_code == 0
    second = runner.invoke(main, ["index", "--bundle", bundle, "--out", out])
    assert second.exit_code == 2
    assert "already exists" in second.output
    forced = runner.invoke(main, ["index", "--bundle", bundle, "--out", out, "--force"])
    assert forced.exit_code == 0


def test_index_ragged_bundle_exits_2(runner, tmp_path):
    mats = [np.ones((3, 8), dtype=np.float32), np.ones((3, 6), dtype=np.float32)]
    bundle = write_bundle(tmp_path / "bundle", mats)
    result = runner.invoke(main, ["index", "--bundle", bundle, "--out", str(tmp_path / "i")])
    assert result.exit_code == 2
    assert "DimensionMismatch" in result.output or "bad bundle" in result.output


def test_index_missing_manifest_exits_2(runner, tmp_path):
    result = runner.invoke(
        main, ["index", "--bundle", str(tmp_path), "--out", str(tmp_path / "i")]
    )
    assert result.exit_code == 2
    assert "bundle.json" in result.output


def test_query_offline_golden_answer(runner, golden_paths, tmp_path):
    trace_path = str(tmp_path / "trace.jsonl")
    g01 = GOLDEN_QUESTIONS[0]
    result = runner.invoke(
        main,
        [
            "query",
            "--index", golden_paths["index"],
            "--question", g01["question"],
            "--task", "retrieval",
            "--variant", "main",
            "--out", trace_path,
            *offline_args(golden_paths),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "answer: The wheelbase must be at least 1525 mm" in result.output
    assert "cited:" in result.output and "[semantic]" in result.output
    events = [json.loads(l) for l in open(trace_path)]
    assert [e["stage"] for e in events] == ["embed_query", "rank_pages", "reason"]


def test_query_router_r2_offline(runner, golden_paths):
    g01 = GOLDEN_QUESTIONS[0]
    result = runner.invoke(
        main,
        [
            "query",
            "--index", golden_paths["index"],
            "--question", g01["question"],
            "--router", "r2",
            *offline_args(golden_paths),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "answer: The wheelbase must be at least 1525 mm" in result.output


def test_query_vision_without_image_exits_1(runner, golden_paths):
    result = runner.invoke(
        main,
        [
            "query",
            "--index", golden_paths["index"],
            "--question", "what does the drawing show?",
            "--variant", "vision2text",
            *offline_args(golden_paths),
        ],
    )
    assert result.exit_code == 1
    assert "GuardNoImage" in result.output


def test_query_usage_errors_exit_2(runner, golden_paths):
    base = ["query", "--index", golden_paths["index"], "--question", "q?"]
    both = runner.invoke(main, base + ["--variant", "main", "--router", "r2"])
    assert both.exit_code == 2
    neither = runner.invoke(main, base)
    assert neither.exit_code == 2
    assert "exactly one" in neither.output
    r1_no_dataset = runner.invoke(main, base + ["--router", "r1"])
    assert r1_no_dataset.exit_code == 2
    assert "--dataset" in r1_no_dataset.output


def test_query_r1_routes_from_dataset(runner, golden_paths):
    g01 = GOLDEN_QUESTIONS[0]
    result = runner.invoke(
        main,
        [
            "query",
            "--index", golden_paths["index"],
            "--question", g01["question"],
            "--task", "retrieval",
            "--router", "r1",
            "--dataset", golden_paths["dataset"],
            *offline_args(golden_paths),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "route: main" in result.output
    assert "answer:" in result.output


def test_query_missing_index_exits_2(runner, golden_paths, tmp_path):
    result = runner.invoke(
        main,
        [
            "query",
            "--index", str(tmp_path / "nowhere"),
            "--question", "q?",
            "--variant", "main",
            *offline_args(golden_paths),
        ],
    )
    assert result.exit_code == 2


def eval_args(paths, out_dir, extra=()):
    return [
        "eval",
        "--index", paths["index"],
        "--dataset", paths["dataset"],
        "--out", str(out_dir),
        *offline_args(paths),
        *extra,
    ]


def test_eval_offline_golden_all_ones(runner, golden_paths, tmp_path):
    out_dir = tmp_path / "run"
    result = runner.invoke(main, eval_args(golden_paths, out_dir, ["--variant", "main"]))
    assert result.exit_code == 0, result.output
    assert "overall" in result.output and "1.000" in result.output
    assert "failures: 0" in result.output
    report = json.load(open(out_dir / "report.json"))
    assert report["overall"] == 1.0
    assert len(report["per_task"]) == 6


def test_eval_byte_identical_across_jobs_and_reruns(runner, golden_paths, tmp_path):
    blobs = []
    for i, jobs in enumerate(("1", "4", "1")):
        out_dir = tmp_path / f"run{i}"
        result = runner.invoke(
            main, eval_args(golden_paths, out_dir, ["--variant", "main", "--jobs", jobs])
        )
        assert result.exit_code == 0, result.output
        blobs.append((out_dir / "predictions.jsonl").read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_eval_router_r1_writes_routes(runner, golden_paths, tmp_path):
    out_dir = tmp_path / "r1"
    result = runner.invoke(main, eval_args(golden_paths, out_dir, ["--router", "r1"]))
    assert result.exit_code == 0, result.output
    routes = [json.loads(l) for l in open(out_dir / "routes.jsonl")]
    assert len(routes) == 6 and all("task" in r for r in routes)


def test_eval_router_r2_writes_routes(runner, golden_paths, tmp_path):
    out_dir = tmp_path / "r2"
    result = runner.invoke(main, eval_args(golden_paths, out_dir, ["--router", "r2"]))
    assert result.exit_code == 0, result.output
    routes = [json.loads(l) for l in open(out_dir / "routes.jsonl")]
    assert [r["qid"] for r in routes] == [g["qid"] for g in GOLDEN_QUESTIONS]
    assert all(r["steps"] for r in routes)


def test_eval_selector_usage_error(runner, golden_paths, tmp_path):
    result = runner.invoke(main, eval_args(golden_paths, tmp_path / "x"))
    assert result.exit_code == 2
    assert "exactly one" in result.output


def test_eval_missing_dataset_exits_2(runner, golden_paths, tmp_path):
    result = runner.invoke(
        main,
        [
            "eval",
            "--index", golden_paths["index"],
            "--dataset", str(tmp_path / "ghost.jsonl"),
            "--variant", "main",
            "--out", str(tmp_path / "o"),
            *offline_args(golden_paths),
        ],
    )
    assert result.exit_code == 2
    assert "not found" in result.output


def test_offline_with_endpoint_in_config_exits_2(runner, golden_paths, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"endpoint": "https://api.example.test/v1"}))
    result = runner.invoke(
        main,
        eval_args(golden_paths, tmp_path / "o", ["--variant", "main", "--config", str(cfg)]),
    )
    assert result.exit_code == 2
    assert "offline" in result.output


def test_live_mode_without_endpoint_exits_2(runner, golden_paths, tmp_path):
    result = runner.invoke(
        main,
        [
            "eval",
            "--index", golden_paths["index"],
            "--dataset", golden_paths["dataset"],
            "--variant", "main",
            "--out", str(tmp_path / "o"),
        ],
    )
    assert result.exit_code == 2
    assert "endpoint and model" in result.output


def test_config_file_overrides_flags(runner, golden_paths, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 2}))
    trace_path = str(tmp_path / "trace.jsonl")
    g01 = GOLDEN_QUESTIONS[0]
    result = runner.invoke(
        main,
        [
            "query",
            "--index", golden_paths["index"],
            "--question", g01["question"],
            "--variant", "main",
            "--k", "4",
            "--config", str(cfg),
            "--out", trace_path,
            *offline_args(golden_paths),
        ],
    )
    assert result.exit_code == 0, result.output
    rank = next(
        json.loads(l) for l in open(trace_path) if json.loads(l)["stage"] == "rank_pages"
    )
    assert "top 2 of" in rank["detail"]


def test_bad_config_exits_2(runner, golden_paths, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    result = runner.invoke(
        main,
        eval_args(golden_paths, tmp_path / "o", ["--variant", "main", "--config", str(cfg)]),
    )
    assert result.exit_code == 2
    assert "config" in result.output


def test_offline_eval_never_touches_network(runner, golden_paths, tmp_path, monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted during offline run")

    monkeypatch.setattr(socket, "socket", refuse)
    out_dir = tmp_path / "sealed"
    result = runner.invoke(
        main, eval_args(golden_paths, out_dir, ["--variant", "main"]), catch_exceptions=False
    )
    assert result.exit_code == 0, result.output
    assert json.load(open(out_dir / "report.json"))["overall"] == 1.0
