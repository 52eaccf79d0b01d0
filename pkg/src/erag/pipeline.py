"""Staged pipeline: annotate -> evaluate -> e2e -> correlate -> report.

Stages communicate through on-disk JSONL intermediates so the expensive
generation phases are resumable and cacheable. Only annotate and e2e ever
touch a generation backend; evaluate and correlate are pure computations over
files. All outputs are written atomically.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .annotators import (annotate_containment, annotate_erag, annotate_llm_judge,
                         annotate_provenance, read_annotations, write_annotations)
from .backends import (GenerationBackend, HTTPBackend, MockBackend, ResponseCache,
                       generate_batch)
from .config import RunConfig
from .correlation import (TAU_VARIANT, CorrelationResult, correlate_run)
from .data import (Document, DownstreamExample, RankedList, load_corpus,
                   load_dataset, load_run_file)
from .downstream import DownstreamMetric
from .e2e import E2EResult, fit_documents, read_e2e_results, write_e2e_results
from .errors import (InsufficientDataError, MalformedRecordError,
                     MissingArtifactError, UndefinedCorrelationError)
from .fileio import read_jsonl, write_json_atomic, write_jsonl_atomic, write_text_atomic
from .ranking import RelevanceVector, binarize, evaluate_list, parse_metrics

log = logging.getLogger(__name__)

RETRIEVAL_SCORES_FILE = "retrieval_scores.jsonl"
E2E_FILE = "e2e_results.jsonl"
CORRELATIONS_CSV = "correlations.csv"
CORRELATIONS_JSON = "correlations.json"
REPORT_FILE = "report.json"
PER_QUERY_CSV = "per_query.csv"
RUN_LOG_FILE = "run_log.json"

BACKEND_SCHEMES = ("erag", "llm_judge")


def annotations_path(out_dir, scheme: str) -> Path:
    return Path(out_dir) / f"annotations_{scheme}.jsonl"


@dataclass
class World:
    """Inputs shared by the generation stages, loaded once per command."""

    examples: list[DownstreamExample]
    corpus: dict[str, Document]
    runs: dict[str, RankedList]

    def examples_with_runs(self) -> list[tuple[DownstreamExample, RankedList]]:
        pairs = []
        for example in self.examples:
            ranked = self.runs.get(example.query_id)
            if ranked is None or len(ranked) == 0:
                log.warning("query %s has no retrieval results, skipped", example.query_id)
                continue
            pairs.append((example, ranked))
        return pairs


def load_world(cfg: RunConfig) -> World:
    examples = load_dataset(cfg.dataset.path, cfg.dataset.format,
                            task=cfg.dataset.task, label_set=cfg.dataset.label_set)
    corpus = load_corpus(cfg.corpus.path, cfg.corpus.max_passage_words,
                         cfg.corpus.title_separator)
    runs = {rl.query_id: rl for rl in load_run_file(cfg.run.path, cfg.run.depth)}
    return World(examples=examples, corpus=corpus, runs=runs)


def build_metric(cfg: RunConfig) -> DownstreamMetric:
    return DownstreamMetric(name=cfg.downstream_metric,
                            normalization=cfg.normalization,
                            label_set=cfg.dataset.label_set)


def load_mock_oracle(path) -> dict:
    oracle = {}
    for line_no, rec in read_jsonl(path):
        for field_name in ("query_id", "doc_ids", "answer"):
            if field_name not in rec:
                raise MalformedRecordError(path, line_no, f"missing field {field_name!r}")
        oracle[(str(rec["query_id"]), frozenset(str(d) for d in rec["doc_ids"]))] = \
            str(rec["answer"])
    return oracle


def build_backend(cfg: RunConfig) -> GenerationBackend:
    settings = cfg.backend
    if settings.kind == "mock":
        if not settings.oracle_path:
            raise ValueError("mock backend requires backend.oracle_path")
        oracle = load_mock_oracle(settings.oracle_path)
        return MockBackend(oracle, settings.fallback,
                           max_parallel=settings.max_parallel,
                           context_limit=settings.context_limit,
                           retry=settings.retry)
    if not settings.url or not settings.model:
        raise ValueError("http backend requires backend.url and backend.model")
    return HTTPBackend(settings.url, settings.model,
                       api_key=os.environ.get(settings.api_key_env),
                       max_parallel=settings.max_parallel,
                       retry=settings.retry,
                       timeout=settings.timeout,
                       temperature=settings.temperature,
                       max_tokens=settings.max_tokens,
                       context_limit=settings.context_limit)


def build_cache(cfg: RunConfig) -> ResponseCache | None:
    return ResponseCache(cfg.cache_dir) if cfg.cache_dir else None


def _update_run_log(out_dir, phase: str, payload: dict) -> None:
    """Volatile runtime stats live apart from the deterministic report files."""
    path = Path(out_dir) / RUN_LOG_FILE
    data = {}
    if path.exists():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            data = {}
    data.setdefault("phases", {})[phase] = payload
    write_json_atomic(path, data)


# ---- annotate ---------------------------------------------------------------


def _reusable(prev: RelevanceVector, ranked: RankedList,
              backend_id: str | None, template_id: str | None) -> bool:
    if prev.doc_ids != ranked.doc_ids or not prev.is_complete:
        return False
    return prev.backend_id == backend_id and prev.template_id == template_id


def cmd_annotate(cfg: RunConfig) -> dict[str, Path]:
    """Produce one annotations file per configured scheme; existing records skip."""
    started = time.perf_counter()
    world = load_world(cfg)
    metric = build_metric(cfg)
    needs_backend = any(s in BACKEND_SCHEMES for s in cfg.schemes)
    backend = build_backend(cfg) if needs_backend else None
    cache = build_cache(cfg)
    pairs = world.examples_with_runs()

    produced: dict[str, Path] = {}
    reused = computed = 0
    try:
        for scheme in cfg.schemes:
            path = annotations_path(cfg.out_dir, scheme)
            existing = {}
            if path.exists():
                existing = {v.query_id: v for v in read_annotations(path)
                            if v.scheme == scheme}
            if scheme == "erag":
                expected_ids = (backend.backend_id, cfg.generation_template.template_id)
            elif scheme == "llm_judge":
                expected_ids = (backend.backend_id, cfg.judge_template.template_id)
            else:
                expected_ids = (None, None)

            vectors = []
            for example, ranked in pairs:
                prev = existing.get(example.query_id)
                if prev is not None and _reusable(prev, ranked, *expected_ids):
                    vectors.append(prev)
                    reused += 1
                    continue
                if scheme == "erag":
                    vector = annotate_erag(example, ranked, world.corpus, backend,
                                           cfg.generation_template, metric, cache=cache)
                elif scheme == "containment":
                    vector = annotate_containment(example, ranked, world.corpus,
                                                  cfg.normalization)
                elif scheme == "provenance":
                    vector = annotate_provenance(example, ranked, world.corpus)
                else:
                    vector = annotate_llm_judge(example, ranked, world.corpus, backend,
                                                cfg.judge_template, cache=cache)
                vectors.append(vector)
                computed += 1
            write_annotations(path, vectors)
            produced[scheme] = path
    finally:
        if backend is not None:
            backend.close()

    _update_run_log(cfg.out_dir, "annotate", {
        "seconds": time.perf_counter() - started,
        "queries": len(pairs),
        "reused": reused,
        "computed": computed,
        "backend_calls": backend.calls_issued if backend else 0,
        "cache_hits": cache.hits if cache else 0,
        "cache_misses": cache.misses if cache else 0,
    })
    return produced


# ---- evaluate ---------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig) -> Path:
    """Aggregate annotation vectors into per-query retrieval scores."""
    started = time.perf_counter()
    metrics = parse_metrics(list(cfg.metrics))
    rows = []
    incomplete = 0
    for scheme in cfg.schemes:
        path = annotations_path(cfg.out_dir, scheme)
        if not path.exists():
            raise MissingArtifactError(
                f"annotations for scheme {scheme!r} not found at {path}; "
                f"run `erag annotate` first")
        for vector in read_annotations(path):
            if not vector.is_complete:
                log.warning("query %s (%s): %d missing label(s), excluded from scoring",
                            vector.query_id, scheme,
                            sum(1 for lbl in vector.labels if lbl is None))
                incomplete += 1
                continue
            if cfg.binarize_threshold is not None and vector.label_kind == "graded":
                vector = binarize(vector, cfg.binarize_threshold)
            rows.append({
                "query_id": vector.query_id,
                "scheme": scheme,
                "label_kind": vector.label_kind,
                "scores": evaluate_list(vector, metrics),
            })
    out_path = Path(cfg.out_dir) / RETRIEVAL_SCORES_FILE
    write_jsonl_atomic(out_path, rows)
    _update_run_log(cfg.out_dir, "evaluate", {
        "seconds": time.perf_counter() - started,
        "rows": len(rows),
        "incomplete_excluded": incomplete,
    })
    return out_path


# ---- e2e --------------------------------------------------------------------


def cmd_e2e(cfg: RunConfig) -> Path:
    """One full-list generation per query at the configured depth."""
    started = time.perf_counter()
    world = load_world(cfg)
    metric = build_metric(cfg)
    backend = build_backend(cfg)
    cache = build_cache(cfg)
    pairs = world.examples_with_runs()

    prepared = []
    try:
        for example, ranked in pairs:
            k = min(cfg.run.depth, len(ranked))
            selected = []
            for doc_id in ranked.doc_ids[:k]:
                if doc_id not in world.corpus:
                    raise ValueError(f"document {doc_id!r} from run for query "
                                     f"{ranked.query_id!r} is not in the corpus")
                selected.append(world.corpus[doc_id])
            fitted, truncated = fit_documents(cfg.generation_template,
                                              example.query_text, selected,
                                              backend.context_limit)
            prepared.append((example, k, fitted, truncated))

        requests = [(example.query_text, fitted, example.query_id)
                    for example, _, fitted, _ in prepared]
        outputs = generate_batch(backend, cfg.generation_template, requests,
                                 cache=cache, fail_fast=cfg.fail_fast,
                                 max_tokens=cfg.backend.max_tokens)
    finally:
        backend.close()

    results = []
    failed = 0
    for (example, k, fitted, truncated), res in zip(prepared, outputs):
        if not res.ok:
            log.warning("query %s: end-to-end generation failed (%s), excluded",
                        example.query_id, res.error)
            failed += 1
            continue
        results.append(E2EResult(
            query_id=example.query_id,
            generated=res.text,
            downstream_score=metric.score(res.text, example.gold_outputs),
            k_used=len(fitted),
            cost=res.cost,
            truncated=truncated,
            cached=res.cached,
        ))
    out_path = Path(cfg.out_dir) / E2E_FILE
    write_e2e_results(out_path, results)
    _update_run_log(cfg.out_dir, "e2e", {
        "seconds": time.perf_counter() - started,
        "queries": len(prepared),
        "failed": failed,
        "backend_calls": backend.calls_issued,
        "cache_hits": cache.hits if cache else 0,
        "cache_misses": cache.misses if cache else 0,
    })
    return out_path


# ---- correlate + report -----------------------------------------------------


@dataclass
class EvaluationReport:
    """Deterministic final report: per-query table, correlations, run metadata."""

    config: dict
    config_hash: str
    correlations: list[dict]
    per_query: list[dict]
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": self.config.get("schema_version", 1),
            "config": self.config,
            "config_hash": self.config_hash,
            "correlations": self.correlations,
            "per_query": self.per_query,
            "metadata": self.metadata,
        }


def _load_retrieval_scores(path) -> dict[tuple[str, str], dict[str, float]]:
    """Index score rows as (scheme, metric) -> {query_id: score}, nulls skipped."""
    table: dict[tuple[str, str], dict[str, float]] = {}
    for _, rec in read_jsonl(path):
        for metric_name, score in rec["scores"].items():
            if score is None:
                continue
            table.setdefault((rec["scheme"], metric_name), {})[rec["query_id"]] = score
    return table


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_correlate(cfg: RunConfig) -> Path:
    """Cross every (scheme, metric) cell with downstream scores; emit the report."""
    started = time.perf_counter()
    out_dir = Path(cfg.out_dir)
    scores_path = out_dir / RETRIEVAL_SCORES_FILE
    e2e_path = out_dir / E2E_FILE
    if not scores_path.exists():
        raise MissingArtifactError(
            f"retrieval scores not found at {scores_path}; run `erag evaluate` first")
    if not e2e_path.exists():
        raise MissingArtifactError(
            f"end-to-end results not found at {e2e_path}; run `erag e2e` first")

    score_table = _load_retrieval_scores(scores_path)
    e2e_results = read_e2e_results(e2e_path)
    downstream = {res.query_id: res.downstream_score for res in e2e_results}
    metrics = [str(m) for m in parse_metrics(list(cfg.metrics))]

    corr_rows = []
    for scheme in cfg.schemes:
        for metric_name in metrics:
            per_query = score_table.get((scheme, metric_name), {})
            row = {"scheme": scheme, "metric": metric_name,
                   "tau": None, "rho": None, "n": len(per_query),
                   "ties_retrieval": None, "ties_downstream": None, "note": None}
            try:
                result: CorrelationResult = correlate_run(per_query, downstream)
            except (InsufficientDataError, UndefinedCorrelationError) as exc:
                row["note"] = str(exc)
            else:
                row.update(tau=result.tau, rho=result.rho, n=result.n,
                           ties_retrieval=result.tie_counts[0],
                           ties_downstream=result.tie_counts[1], note=None)
            corr_rows.append(row)

    # CSV mirror of the correlation table
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scheme", "metric", "tau", "rho", "n",
                     "ties_retrieval", "ties_downstream"])
    for row in corr_rows:
        writer.writerow([row["scheme"], row["metric"], _fmt(row["tau"]),
                         _fmt(row["rho"]), row["n"], _fmt(row["ties_retrieval"]),
                         _fmt(row["ties_downstream"])])
    write_text_atomic(out_dir / CORRELATIONS_CSV, buf.getvalue())
    write_json_atomic(out_dir / CORRELATIONS_JSON, corr_rows)

    # Per-query table joining every score column with the downstream outcome.
    e2e_by_qid = {res.query_id: res for res in e2e_results}
    all_qids = sorted(set(downstream) |
                      {qid for cell in score_table.values() for qid in cell})
    per_query_rows = []
    for qid in all_qids:
        row = {"query_id": qid}
        res = e2e_by_qid.get(qid)
        row["downstream_score"] = res.downstream_score if res else None
        row["k_used"] = res.k_used if res else None
        row["truncated"] = res.truncated if res else None
        for scheme in cfg.schemes:
            for metric_name in metrics:
                row[f"{scheme}:{metric_name}"] = \
                    score_table.get((scheme, metric_name), {}).get(qid)
        per_query_rows.append(row)

    buf = io.StringIO()
    columns = (["query_id", "downstream_score", "k_used", "truncated"]
               + [f"{scheme}:{metric_name}" for scheme in cfg.schemes
                  for metric_name in metrics])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in per_query_rows:
        writer.writerow([_fmt(row.get(col)) if row.get(col) is not None else ""
                         for col in columns])
    write_text_atomic(out_dir / PER_QUERY_CSV, buf.getvalue())

    # Cost accounting: intrinsic generation costs are deterministic, so they
    # belong in the report; wall-clock and hit rates go to the run log.
    annotation_cost = {}
    parse_failures = 0
    incomplete = {}
    backend_ids = set()
    for scheme in cfg.schemes:
        path = annotations_path(cfg.out_dir, scheme)
        if not path.exists():
            continue
        totals = {"prompt_tokens": 0, "output_tokens": 0, "simulated_flops": 0.0}
        incomplete[scheme] = 0
        for vector in read_annotations(path):
            if vector.backend_id:
                backend_ids.add(vector.backend_id)
            if not vector.is_complete:
                incomplete[scheme] += 1
            cost = vector.meta.get("cost") or {}
            for key in totals:
                totals[key] += cost.get(key, 0)
            parse_failures += vector.meta.get("parse_failures", 0)
        if any(totals.values()):
            annotation_cost[scheme] = totals

    e2e_cost = {
        "prompt_tokens": sum(r.cost.prompt_length for r in e2e_results),
        "output_tokens": sum(r.cost.output_length for r in e2e_results),
        "simulated_flops": sum(r.cost.simulated_flops for r in e2e_results),
    }
    erag_flops = annotation_cost.get("erag", {}).get("simulated_flops", 0.0)
    cost_ratio = (e2e_cost["simulated_flops"] / erag_flops) if erag_flops else None

    metadata = {
        "tau_variant": TAU_VARIANT,
        "backend_ids": sorted(backend_ids),
        "judge_canonical": False if "llm_judge" in cfg.schemes else None,
        "counts": {
            "e2e_queries": len(e2e_results),
            "truncated_queries": sum(1 for r in e2e_results if r.truncated),
            "incomplete_annotations": incomplete,
            "judge_parse_failures": parse_failures,
        },
        "cost": {
            "annotation": annotation_cost,
            "e2e": e2e_cost,
            "e2e_over_erag_flops_ratio": cost_ratio,
        },
    }
    report = EvaluationReport(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        correlations=corr_rows,
        per_query=per_query_rows,
        metadata=metadata,
    )
    report_path = out_dir / REPORT_FILE
    write_json_atomic(report_path, report.to_dict())
    _update_run_log(cfg.out_dir, "correlate", {
        "seconds": time.perf_counter() - started,
        "cells": len(corr_rows),
    })
    return report_path


def cmd_report(cfg: RunConfig) -> str:
    """Render the final report as text; returns the rendered string."""
    report_path = Path(cfg.out_dir) / REPORT_FILE
    if not report_path.exists():
        raise MissingArtifactError(
            f"report not found at {report_path}; run `erag correlate` first")
    report = json.loads(report_path.read_text(encoding="utf-8"))

    lines = []
    meta = report["metadata"]
    lines.append(f"config hash: {report['config_hash']}")
    lines.append(f"tau variant: {meta['tau_variant']}")
    lines.append(f"queries (end-to-end): {meta['counts']['e2e_queries']}")
    if meta["counts"]["judge_parse_failures"]:
        lines.append(f"judge parse failures: {meta['counts']['judge_parse_failures']}")
    ratio = meta["cost"]["e2e_over_erag_flops_ratio"]
    if ratio is not None:
        lines.append(f"e2e / per-document simulated cost ratio: {ratio:.2f}x")
    lines.append("")
    header = f"{'scheme':<12} {'metric':<16} {'tau':>9} {'rho':>9} {'n':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report["correlations"]:
        tau = "NA" if row["tau"] is None else f"{row['tau']:.3f}"
        rho = "NA" if row["rho"] is None else f"{row['rho']:.3f}"
        lines.append(f"{row['scheme']:<12} {row['metric']:<16} {tau:>9} {rho:>9} "
                     f"{row['n']:>6}")
    text = "\n".join(lines) + "\n"
    return text
