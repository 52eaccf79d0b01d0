"""End-to-end evaluation: one full-list generation per query, scored downstream."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .backends import (CostRecord, GenerationBackend, PromptTemplate,
                       ResponseCache, generate, whitespace_tokens)
from .data import Document, DownstreamExample, RankedList
from .downstream import DownstreamMetric
from .fileio import read_jsonl, write_jsonl_atomic


@dataclass(frozen=True)
class E2EResult:
    query_id: str
    generated: str
    downstream_score: float
    k_used: int
    cost: CostRecord
    truncated: bool = False
    cached: bool = False


def fit_documents(template: PromptTemplate, query: str,
                  documents: Sequence[Document],
                  context_limit: int | None) -> tuple[list[Document], bool]:
    """Drop trailing documents until the rendered prompt fits the context limit.

    The limit is compared against whitespace token counts (the same estimate
    the mock cost model uses). Returns the kept prefix and a truncation flag.
    """
    docs = list(documents)
    if context_limit is None:
        return docs, False
    while docs and whitespace_tokens(template.render(query, docs)) > context_limit:
        docs.pop()
    return docs, len(docs) < len(documents)


def evaluate_e2e(example: DownstreamExample, ranked: RankedList,
                 docs: Mapping[str, Document], backend: GenerationBackend,
                 template: PromptTemplate, metric: DownstreamMetric, k: int, *,
                 cache: ResponseCache | None = None,
                 max_tokens: int | None = None) -> E2EResult:
    """Feed the top-k documents (rank order, best first) in one prompt and score it."""
    if not 1 <= k <= len(ranked):
        raise ValueError(f"k={k} must be in [1, {len(ranked)}] for query {ranked.query_id!r}")
    selected = []
    for doc_id in ranked.doc_ids[:k]:
        if doc_id not in docs:
            raise ValueError(f"document {doc_id!r} from run for query "
                             f"{ranked.query_id!r} is not in the corpus")
        selected.append(docs[doc_id])
    fitted, truncated = fit_documents(template, example.query_text, selected,
                                      backend.context_limit)
    result = generate(backend, template, example.query_text, fitted,
                      query_id=example.query_id, cache=cache, max_tokens=max_tokens)
    if not result.ok:
        raise result.error
    score = metric.score(result.text, example.gold_outputs)
    return E2EResult(
        query_id=example.query_id,
        generated=result.text,
        downstream_score=score,
        k_used=len(fitted),
        cost=result.cost,
        truncated=truncated,
        cached=result.cached,
    )


def result_to_record(res: E2EResult) -> dict:
    return {
        "query_id": res.query_id,
        "generated": res.generated,
        "downstream_score": res.downstream_score,
        "k_used": res.k_used,
        "truncated": res.truncated,
        "cost": res.cost.as_dict(),
    }


def record_to_result(record: dict) -> E2EResult:
    return E2EResult(
        query_id=record["query_id"],
        generated=record["generated"],
        downstream_score=float(record["downstream_score"]),
        k_used=int(record["k_used"]),
        cost=CostRecord.from_dict(record["cost"]),
        truncated=bool(record.get("truncated", False)),
    )


def write_e2e_results(path, results) -> None:
    write_jsonl_atomic(path, (result_to_record(r) for r in results))


def read_e2e_results(path) -> list[E2EResult]:
    return [record_to_result(rec) for _, rec in read_jsonl(path)]
