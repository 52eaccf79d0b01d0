"""Shared fixtures: synthetic worlds with a planted-answer structure.

A world is a dataset + corpus + run file + mock-backend oracle wired into a
run config. The mock generator answers correctly iff the prompt's document set
contains at least one planted (answer-bearing) document, which gives every
scheme a known ground truth to be checked against.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

import yaml

from erag.config import RunConfig

DEFAULT_METRICS = ("precision", "recall", "map", "mrr", "ndcg", "hit_ratio")


def write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def build_world(root: Path, *, n_queries=10, docs_per_query=5, plant_prob=0.5,
                seed=0, filler_words=20, task="extractive_qa",
                downstream_metric="exact_match", schemes=("erag",),
                metrics=DEFAULT_METRICS, depth=None, use_cache=True,
                label_set=None, oracle_style="answers",
                fallback="i do not know") -> dict:
    """Write all world files under root and return paths plus ground truth."""
    rng = random.Random(seed)
    depth = depth or docs_per_query

    dataset_records = []
    corpus_records = []
    oracle_records = []
    run_lines = []
    planted: dict[str, set[str]] = {}
    retrieved: dict[str, list[str]] = {}
    answers: dict[str, str] = {}

    for i in range(n_queries):
        qid = f"q{i}"
        answer = f"ans{i}qx"
        answers[qid] = answer
        article_ids = [f"art-{i}-{j}" for j in range(docs_per_query)]
        is_planted = [rng.random() < plant_prob for j in range(docs_per_query)]
        doc_ids = [f"{aid}-0" for aid in article_ids]
        planted[qid] = {doc_ids[j] for j in range(docs_per_query) if is_planted[j]}

        dataset_records.append({
            "id": qid,
            "input": f"what is the token for query {i}",
            "output": [{
                "answer": answer,
                "provenance": [{"wikipedia_id": article_ids[j]}
                               for j in range(docs_per_query) if is_planted[j]],
            }],
        })
        for j, aid in enumerate(article_ids):
            filler = " ".join(f"w{i}x{j}n{w}" for w in range(filler_words))
            body = f"{filler} {answer}" if is_planted[j] else filler
            corpus_records.append({"id": aid, "title": f"Title {i} {j}", "text": body})

        order = list(range(docs_per_query))
        rng.shuffle(order)
        ranked_ids = [doc_ids[j] for j in order][:depth]
        retrieved[qid] = ranked_ids
        for rank, pid in enumerate(ranked_ids, start=1):
            score = float(depth - rank + 1)
            run_lines.append(f"{qid} Q0 {pid} {rank} {score!r} synth")

        for j in range(docs_per_query):
            if doc_ids[j] not in ranked_ids:
                continue
            if oracle_style == "answers":
                # wrong answers are single tokens so every output is one token
                # long and cost comparisons depend only on prompt lengths
                single = answer if is_planted[j] else f"nope{i}j{j}"
            else:  # judge-style verdicts
                single = "relevant" if is_planted[j] else "not relevant"
            oracle_records.append({"query_id": qid, "doc_ids": [doc_ids[j]],
                                   "answer": single})
        full_hit = any(is_planted[j] for j in range(docs_per_query)
                       if doc_ids[j] in ranked_ids)
        oracle_records.append({
            "query_id": qid,
            "doc_ids": ranked_ids,
            "answer": answer if full_hit else f"nope{i}",
        })

    paths = {
        "dataset": root / "dataset.jsonl",
        "corpus": root / "corpus.jsonl",
        "run": root / "bm25.run",
        "oracle": root / "oracle.jsonl",
        "config": root / "config.yaml",
        "out": root / "out",
        "cache": root / "cache",
    }
    write_jsonl(paths["dataset"], dataset_records)
    write_jsonl(paths["corpus"], corpus_records)
    paths["run"].write_text("".join(line + "\n" for line in run_lines), encoding="utf-8")
    write_jsonl(paths["oracle"], oracle_records)

    config = {
        "schema_version": 1,
        "dataset": {"path": str(paths["dataset"]), "format": "kilt_jsonl",
                    "task": task,
                    "label_set": list(label_set) if label_set else None},
        "corpus": {"path": str(paths["corpus"]), "max_passage_words": 100,
                   "title_separator": " "},
        "run": {"path": str(paths["run"]), "depth": depth},
        "schemes": list(schemes),
        "metrics": list(metrics),
        "downstream_metric": downstream_metric,
        "backend": {"kind": "mock", "oracle_path": str(paths["oracle"]),
                    "fallback": fallback, "max_parallel": 4},
        "cache_dir": str(paths["cache"]) if use_cache else None,
        "out_dir": str(paths["out"]),
        "seed": seed,
    }
    paths["config"].write_text(yaml.safe_dump(config), encoding="utf-8")

    return {
        "paths": paths,
        "config": RunConfig.from_file(paths["config"]),
        "planted": planted,
        "retrieved": retrieved,
        "answers": answers,
    }
