"""Ranking metrics that aggregate a per-document relevance vector into one score.

Graded (non-integer) labels are legal only for precision (their mean) and
hit_ratio (their maximum); recall, map, mrr, and ndcg reject them rather than
silently binarizing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

from .errors import UnsupportedLabelKindError

SCHEMES = ("erag", "containment", "provenance", "llm_judge")
LABEL_KINDS = ("binary", "graded")
METRIC_NAMES = ("precision", "recall", "map", "mrr", "ndcg", "hit_ratio")
BINARY_ONLY = frozenset({"recall", "map", "mrr", "ndcg"})

Cutoff = Union[int, str]  # positive int or "full"


@dataclass
class RelevanceVector:
    """Per-document labels for one ranked list, in rank order.

    A label of None marks a document whose annotation failed; such vectors are
    excluded from aggregation by the callers.
    """

    query_id: str
    labels: tuple
    scheme: str
    label_kind: str
    doc_ids: tuple[str, ...] | None = None
    backend_id: str | None = None
    template_id: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        for label in self.labels:
            if label is None:
                continue
            if not 0.0 <= label <= 1.0:
                raise ValueError(f"label {label!r} outside [0, 1]")
            if self.label_kind == "binary" and label not in (0.0, 1.0):
                raise ValueError(f"binary vector holds non-binary label {label!r}")
        if self.doc_ids is not None:
            self.doc_ids = tuple(self.doc_ids)
            if len(self.doc_ids) != len(self.labels):
                raise ValueError("doc_ids and labels must have equal length")

    @property
    def is_complete(self) -> bool:
        return all(label is not None for label in self.labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class RankingMetric:
    """A metric name plus an evaluation depth (positive int or "full")."""

    name: str
    cutoff: Cutoff = "full"

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown ranking metric {self.name!r}")
        if self.cutoff != "full" and (not isinstance(self.cutoff, int) or self.cutoff < 1):
            raise ValueError(f"cutoff must be a positive integer or 'full', got {self.cutoff!r}")

    @classmethod
    def parse(cls, spec: str) -> "RankingMetric":
        """Parse "ndcg@10", "map", or "precision@full"."""
        name, _, cut = spec.strip().partition("@")
        if not cut or cut == "full":
            return cls(name, "full")
        try:
            return cls(name, int(cut))
        except ValueError:
            raise ValueError(f"bad metric cutoff in {spec!r}") from None

    def __str__(self) -> str:
        return self.name if self.cutoff == "full" else f"{self.name}@{self.cutoff}"


def parse_metrics(spec: str | Sequence[str]) -> list[RankingMetric]:
    """Parse a comma-separated string or a sequence of metric specs."""
    parts = spec.split(",") if isinstance(spec, str) else list(spec)
    return [RankingMetric.parse(part) for part in parts if str(part).strip()]


def _labels(v: RelevanceVector, cutoff: Cutoff, binary_required: bool = False):
    """Validate and return (labels within cutoff, full labels)."""
    if not v.is_complete:
        raise ValueError(f"vector for query {v.query_id!r} has missing labels")
    if binary_required and v.label_kind != "binary":
        raise UnsupportedLabelKindError(
            f"metric requires binary labels but vector for query {v.query_id!r} is graded")
    n = len(v.labels)
    c = n if cutoff == "full" else cutoff
    if c > n:
        raise ValueError(f"cutoff {c} exceeds vector length {n}")
    if c < 1:
        raise ValueError("cutoff must be at least 1")
    return list(v.labels[:c]), list(v.labels)


def precision(v: RelevanceVector, cutoff: Cutoff = "full") -> float:
    """Mean of the labels within the cutoff; for graded labels, their average."""
    top, _ = _labels(v, cutoff)
    return sum(top) / len(top)


def hit_ratio(v: RelevanceVector, cutoff: Cutoff = "full") -> float:
    """Maximum label within the cutoff; for graded labels, their maximum."""
    top, _ = _labels(v, cutoff)
    return max(top)


def recall(v: RelevanceVector, cutoff: Cutoff = "full") -> float:
    """Positives within the cutoff over positives in the whole vector (0 if none)."""
    top, full = _labels(v, cutoff, binary_required=True)
    total = sum(1 for label in full if label == 1.0)
    if total == 0:
        return 0.0
    return sum(1 for label in top if label == 1.0) / total


def average_precision(v: RelevanceVector, cutoff: Cutoff = "full") -> float:
    """Sum of precision@i at positive positions i <= cutoff, over total positives."""
    top, full = _labels(v, cutoff, binary_required=True)
    total = sum(1 for label in full if label == 1.0)
    if total == 0:
        return 0.0
    hits = 0
    acc = 0.0
    for i, label in enumerate(top, start=1):
        if label == 1.0:
            hits += 1
            acc += hits / i
    return acc / total


def reciprocal_rank(v: RelevanceVector, cutoff: Cutoff = "full") -> float:
    """1 / (1-based rank of the first positive within the cutoff), else 0."""
    top, _ = _labels(v, cutoff, binary_required=True)
    for i, label in enumerate(top, start=1):
        if label == 1.0:
            return 1.0 / i
    return 0.0


def ndcg(v: RelevanceVector, cutoff: Cutoff = "full") -> float:
    """DCG with 1/log2(rank+1) discount over the DCG of the ideal ordering.

    The ideal ordering sorts the full label vector descending before applying
    the cutoff, so appending zero labels beyond the cutoff cannot change it.
    """
    top, full = _labels(v, cutoff, binary_required=True)
    dcg = sum(label / math.log2(i + 1) for i, label in enumerate(top, start=1))
    ideal = sorted(full, reverse=True)[:len(top)]
    idcg = sum(label / math.log2(i + 1) for i, label in enumerate(ideal, start=1))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


_METRIC_FUNCS = {
    "precision": precision,
    "recall": recall,
    "map": average_precision,
    "mrr": reciprocal_rank,
    "ndcg": ndcg,
    "hit_ratio": hit_ratio,
}


def evaluate_list(v: RelevanceVector, metrics: Sequence[RankingMetric]) -> dict[str, float | None]:
    """Apply each metric; a metric that rejects the label kind yields None (skipped)."""
    scores: dict[str, float | None] = {}
    for metric in metrics:
        try:
            scores[str(metric)] = _METRIC_FUNCS[metric.name](v, metric.cutoff)
        except UnsupportedLabelKindError:
            scores[str(metric)] = None
    return scores


def binarize(v: RelevanceVector, threshold: float) -> RelevanceVector:
    """Map labels to 1.0 where label > threshold, else 0.0."""
    if not v.is_complete:
        raise ValueError("cannot binarize a vector with missing labels")
    labels = tuple(1.0 if label > threshold else 0.0 for label in v.labels)
    meta = dict(v.meta)
    meta["binarize_threshold"] = threshold
    return RelevanceVector(
        query_id=v.query_id,
        labels=labels,
        scheme=v.scheme,
        label_kind="binary",
        doc_ids=v.doc_ids,
        backend_id=v.backend_id,
        template_id=v.template_id,
        meta=meta,
    )
