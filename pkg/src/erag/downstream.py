"""Downstream output scoring: exact match, label accuracy, and unigram F1.

These scores serve double duty: they are the end-to-end performance measure
and, applied to single-document generations, the per-document relevance labels.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

METRIC_NAMES = ("exact_match", "accuracy", "unigram_f1")

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
# Punctuation maps to a space (not deletion) so hyphenated or slashed spans
# split into separate tokens before whitespace collapse.
_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


@dataclass(frozen=True)
class NormalizationPolicy:
    """Text canonicalization applied before any string comparison."""

    lowercase: bool = True
    strip_punctuation: bool = True
    strip_articles: bool = True
    collapse_whitespace: bool = True

    def as_dict(self) -> dict:
        return {
            "lowercase": self.lowercase,
            "strip_punctuation": self.strip_punctuation,
            "strip_articles": self.strip_articles,
            "collapse_whitespace": self.collapse_whitespace,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationPolicy":
        return cls(**{key: bool(data[key]) for key in cls().as_dict() if key in data})


DEFAULT_POLICY = NormalizationPolicy()


def normalize(text: str, policy: NormalizationPolicy = DEFAULT_POLICY) -> str:
    """Apply the policy steps in a fixed order; the result is idempotent."""
    if policy.lowercase:
        text = text.lower()
    if policy.strip_punctuation:
        text = text.translate(_PUNCT_TABLE)
    if policy.strip_articles:
        text = _ARTICLES_RE.sub(" ", text)
    if policy.collapse_whitespace:
        text = " ".join(text.split())
    return text


def exact_match(generated: str, golds: Sequence[str],
                policy: NormalizationPolicy = DEFAULT_POLICY) -> float:
    """1.0 iff the normalized generation equals any normalized gold output."""
    if not golds:
        raise ValueError("golds must be non-empty")
    norm_gen = normalize(generated, policy)
    return 1.0 if any(norm_gen == normalize(g, policy) for g in golds) else 0.0


def accuracy(generated: str, golds: Sequence[str], label_set: Sequence[str],
             policy: NormalizationPolicy = DEFAULT_POLICY) -> float:
    """1.0 iff the generation names a gold label; anything else scores 0."""
    if not golds:
        raise ValueError("golds must be non-empty")
    labels = {normalize(lbl, policy) for lbl in label_set}
    norm_golds = {normalize(g, policy) for g in golds}
    if not norm_golds <= labels:
        raise ValueError("gold outputs must be drawn from the label set")
    return 1.0 if normalize(generated, policy) in norm_golds else 0.0


def unigram_f1(generated: str, golds: Sequence[str],
               policy: NormalizationPolicy = DEFAULT_POLICY) -> float:
    """Max over golds of the harmonic mean of token-multiset precision and recall."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = normalize(generated, policy).split()
    best = 0.0
    for gold in golds:
        gold_tokens = normalize(gold, policy).split()
        if not pred_tokens and not gold_tokens:
            best = max(best, 1.0)
            continue
        if not pred_tokens or not gold_tokens:
            continue
        overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
        if overlap == 0:
            continue
        precision = overlap / len(pred_tokens)
        recall = overlap / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


@dataclass(frozen=True)
class DownstreamMetric:
    """A named downstream scorer bound to a normalization policy."""

    name: str
    normalization: NormalizationPolicy = DEFAULT_POLICY
    label_set: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown downstream metric {self.name!r}")
        if self.name == "accuracy" and not self.label_set:
            raise ValueError("accuracy requires a label_set")

    @property
    def binary(self) -> bool:
        """True when the metric only produces 0 or 1."""
        return self.name != "unigram_f1"

    def score(self, generated: str, golds: Sequence[str]) -> float:
        if self.name == "exact_match":
            return exact_match(generated, golds, self.normalization)
        if self.name == "accuracy":
            return accuracy(generated, golds, self.label_set, self.normalization)
        return unigram_f1(generated, golds, self.normalization)
