"""Rank correlation between per-query retrieval scores and downstream scores.

Kendall's tau is the tie-corrected tau-b variant: downstream exact-match and
accuracy scores are binary, so ties dominate and the uncorrected variant would
be systematically deflated. Spearman's rho uses average ranks for ties.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from scipy import stats

from .errors import InsufficientDataError, UndefinedCorrelationError

TAU_VARIANT = "tau-b"


@dataclass(frozen=True)
class PairedSample:
    """One query's (retrieval score, downstream score) point."""

    query_id: str
    retrieval_score: float
    downstream_score: float

    def __post_init__(self):
        if not math.isfinite(self.retrieval_score) or not math.isfinite(self.downstream_score):
            raise ValueError(f"non-finite score for query {self.query_id!r}")


@dataclass(frozen=True)
class CorrelationResult:
    tau: float
    rho: float
    n: int
    tie_counts: tuple[int, int]

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("correlation needs at least two samples")
        if abs(self.tau) > 1 + 1e-12 or abs(self.rho) > 1 + 1e-12:
            raise ValueError("correlation outside [-1, 1]")


def _split(samples: Sequence[PairedSample]) -> tuple[list[float], list[float]]:
    xs = [s.retrieval_score for s in samples]
    ys = [s.downstream_score for s in samples]
    if len(xs) < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {len(xs)}")
    if len({s.query_id for s in samples}) != len(samples):
        raise ValueError("samples must be deduplicated by query_id")
    if min(xs) == max(xs):
        raise UndefinedCorrelationError("all retrieval scores identical")
    if min(ys) == max(ys):
        raise UndefinedCorrelationError("all downstream scores identical")
    return xs, ys


def tied_pair_count(values: Sequence[float]) -> int:
    """Number of sample pairs sharing a value: sum over groups of t*(t-1)/2."""
    return sum(count * (count - 1) // 2 for count in Counter(values).values())


def kendall_tau(samples: Sequence[PairedSample]) -> float:
    xs, ys = _split(samples)
    tau = stats.kendalltau(xs, ys, variant="b").statistic
    if math.isnan(tau):
        raise UndefinedCorrelationError("tau undefined for this input")
    return float(tau)


def spearman_rho(samples: Sequence[PairedSample]) -> float:
    xs, ys = _split(samples)
    rho = stats.spearmanr(xs, ys).statistic
    if math.isnan(rho):
        raise UndefinedCorrelationError("rho undefined for this input")
    return float(rho)


def correlate_run(retrieval_scores: Mapping[str, float],
                  downstream: Mapping[str, object]) -> CorrelationResult:
    """Join the two per-query maps on query id and correlate the paired scores.

    ``downstream`` values may be floats or objects with a downstream_score
    attribute. Queries present in only one map are excluded pairwise.
    """
    common = sorted(set(retrieval_scores) & set(downstream))
    if len(common) < 2:
        raise InsufficientDataError(
            f"only {len(common)} queries present in both score sets")
    samples = []
    for qid in common:
        value = downstream[qid]
        score = getattr(value, "downstream_score", value)
        samples.append(PairedSample(qid, float(retrieval_scores[qid]), float(score)))
    xs = [s.retrieval_score for s in samples]
    ys = [s.downstream_score for s in samples]
    return CorrelationResult(
        tau=kendall_tau(samples),
        rho=spearman_rho(samples),
        n=len(samples),
        tie_counts=(tied_pair_count(xs), tied_pair_count(ys)),
    )
