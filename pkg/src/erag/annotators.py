"""Per-document relevance annotation under the four supported schemes.

Every scheme produces a RelevanceVector aligned 1:1 with the ranked list; a
label depends only on (query, document), never on rank position.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

from .backends import (GenerationBackend, PromptTemplate, ResponseCache,
                       generate_batch)
from .data import Document, DownstreamExample, RankedList
from .downstream import (DEFAULT_POLICY, DownstreamMetric, NormalizationPolicy,
                         normalize)
from .errors import UnsupportedTaskError
from .fileio import read_jsonl, write_jsonl_atomic
from .ranking import SCHEMES, RelevanceVector

log = logging.getLogger(__name__)

# Judge outputs keep their articles so "not relevant" stays a two-token prefix.
_JUDGE_PARSE_POLICY = NormalizationPolicy(strip_articles=False)
_NEGATIVE_PREFIXES = ("not relevant", "irrelevant")


@dataclass
class AnnotationRun:
    """Configuration for one scheme pass; validates the scheme's requirements."""

    scheme: str
    backend: GenerationBackend | None = None
    downstream_metric: DownstreamMetric | None = None
    judge_template: PromptTemplate | None = None
    template: PromptTemplate | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "erag" and (self.backend is None or self.downstream_metric is None):
            raise ValueError("erag annotation requires a backend and a downstream metric")
        if self.scheme == "llm_judge" and (self.backend is None or self.judge_template is None):
            raise ValueError("llm_judge annotation requires a backend and a judge template")


def _resolve_docs(ranked: RankedList, docs: Mapping[str, Document]) -> list[Document]:
    resolved = []
    for doc_id in ranked.doc_ids:
        if doc_id not in docs:
            raise ValueError(f"document {doc_id!r} from run for query "
                             f"{ranked.query_id!r} is not in the corpus")
        resolved.append(docs[doc_id])
    return resolved


def _sum_costs(results) -> dict:
    prompt = output = 0
    flops = 0.0
    for res in results:
        if res.ok:
            prompt += res.cost.prompt_length
            output += res.cost.output_length
            flops += res.cost.simulated_flops
    return {"prompt_tokens": prompt, "output_tokens": output, "simulated_flops": flops}


def annotate_erag(example: DownstreamExample, ranked: RankedList,
                  docs: Mapping[str, Document], backend: GenerationBackend,
                  template: PromptTemplate, metric: DownstreamMetric, *,
                  cache: ResponseCache | None = None) -> RelevanceVector:
    """Feed each document alone to the generator and score its output.

    The downstream score of the single-document generation becomes the
    document's label. A failed generation leaves a missing (None) label and
    the vector is excluded from aggregation downstream.
    """
    resolved = _resolve_docs(ranked, docs)
    requests = [(example.query_text, (doc,), example.query_id) for doc in resolved]
    results = generate_batch(backend, template, requests, cache=cache)

    labels = []
    failed = []
    for doc, res in zip(resolved, results):
        if res.ok:
            labels.append(metric.score(res.text, example.gold_outputs))
        else:
            labels.append(None)
            failed.append(doc.doc_id)
    if failed:
        log.warning("query %s: generation failed for %d document(s): %s",
                    example.query_id, len(failed), ", ".join(failed))

    meta = {"cost": _sum_costs(results)}
    if failed:
        meta["missing"] = len(failed)
    return RelevanceVector(
        query_id=example.query_id,
        labels=tuple(labels),
        scheme="erag",
        label_kind="binary" if metric.binary else "graded",
        doc_ids=ranked.doc_ids,
        backend_id=backend.backend_id,
        template_id=template.template_id,
        meta=meta,
    )


def _contains_token_span(haystack: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(haystack):
        return False
    for start in range(len(haystack) - len(needle) + 1):
        if haystack[start:start + len(needle)] == needle:
            return True
    return False


def annotate_containment(example: DownstreamExample, ranked: RankedList,
                         docs: Mapping[str, Document],
                         policy: NormalizationPolicy = DEFAULT_POLICY) -> RelevanceVector:
    """Mark a document relevant iff a gold answer occurs in it verbatim.

    Matching is on contiguous token subsequences after normalization, so "art"
    never matches inside "earth". Only defined for extractive QA.
    """
    if example.task != "extractive_qa":
        raise UnsupportedTaskError(
            f"containment annotation requires extractive_qa, got task "
            f"{example.task!r} for query {example.query_id!r}")
    resolved = _resolve_docs(ranked, docs)
    gold_token_lists = [normalize(g, policy).split() for g in example.gold_outputs]
    labels = []
    for doc in resolved:
        doc_tokens = normalize(doc.text, policy).split()
        hit = any(_contains_token_span(doc_tokens, gold) for gold in gold_token_lists)
        labels.append(1.0 if hit else 0.0)
    return RelevanceVector(
        query_id=example.query_id,
        labels=tuple(labels),
        scheme="containment",
        label_kind="binary",
        doc_ids=ranked.doc_ids,
    )


def annotate_provenance(example: DownstreamExample, ranked: RankedList,
                        corpus: Mapping[str, Document]) -> RelevanceVector:
    """Label a passage positive iff its source article is in the gold provenance."""
    positives = set(example.provenance_doc_ids)
    labels = []
    for doc_id in ranked.doc_ids:
        doc = corpus.get(doc_id)
        if doc is None or doc.source_article_id is None:
            log.warning("query %s: document %s has no known source article, labeled 0",
                        example.query_id, doc_id)
            labels.append(0.0)
            continue
        labels.append(1.0 if doc.source_article_id in positives else 0.0)
    return RelevanceVector(
        query_id=example.query_id,
        labels=tuple(labels),
        scheme="provenance",
        label_kind="binary",
        doc_ids=ranked.doc_ids,
    )


def annotate_llm_judge(example: DownstreamExample, ranked: RankedList,
                       docs: Mapping[str, Document], backend: GenerationBackend,
                       judge_template: PromptTemplate, *,
                       cache: ResponseCache | None = None) -> RelevanceVector:
    """Ask the backend to classify each (query, document) pair as relevant or not.

    The judge's output is normalized and prefix-matched; anything that is
    neither an affirmative nor a recognized negative counts as a parse failure
    and labels the document 0.
    """
    resolved = _resolve_docs(ranked, docs)
    requests = [(example.query_text, (doc,), example.query_id) for doc in resolved]
    results = generate_batch(backend, judge_template, requests, cache=cache)

    labels = []
    failed = []
    parse_failures = 0
    for doc, res in zip(resolved, results):
        if not res.ok:
            labels.append(None)
            failed.append(doc.doc_id)
            continue
        verdict = normalize(res.text, _JUDGE_PARSE_POLICY)
        if verdict.startswith("relevant"):
            labels.append(1.0)
        elif verdict.startswith(_NEGATIVE_PREFIXES):
            labels.append(0.0)
        else:
            parse_failures += 1
            labels.append(0.0)
    if failed:
        log.warning("query %s: judge call failed for %d document(s): %s",
                    example.query_id, len(failed), ", ".join(failed))

    meta = {"cost": _sum_costs(results), "parse_failures": parse_failures}
    if failed:
        meta["missing"] = len(failed)
    return RelevanceVector(
        query_id=example.query_id,
        labels=tuple(labels),
        scheme="llm_judge",
        label_kind="binary",
        doc_ids=ranked.doc_ids,
        backend_id=backend.backend_id,
        template_id=judge_template.template_id,
        meta=meta,
    )


def vector_to_record(v: RelevanceVector) -> dict:
    return {
        "query_id": v.query_id,
        "scheme": v.scheme,
        "doc_ids": list(v.doc_ids or ()),
        "labels": list(v.labels),
        "label_kind": v.label_kind,
        "backend_id": v.backend_id,
        "template_id": v.template_id,
        "meta": v.meta,
    }


def record_to_vector(record: dict) -> RelevanceVector:
    return RelevanceVector(
        query_id=record["query_id"],
        labels=tuple(record["labels"]),
        scheme=record["scheme"],
        label_kind=record["label_kind"],
        doc_ids=tuple(record.get("doc_ids") or ()) or None,
        backend_id=record.get("backend_id"),
        template_id=record.get("template_id"),
        meta=record.get("meta") or {},
    )


def write_annotations(path, vectors) -> None:
    write_jsonl_atomic(path, (vector_to_record(v) for v in vectors))


def read_annotations(path) -> list[RelevanceVector]:
    return [record_to_vector(rec) for _, rec in read_jsonl(path)]
