"""Retrieval evaluation for RAG pipelines.

Scores a retrieval result list by running the downstream generator on each
retrieved document individually, compares that against baseline relevance
annotation schemes, and measures each scheme's rank correlation with the
pipeline's end-to-end performance.
"""

from .annotators import (annotate_containment, annotate_erag, annotate_llm_judge,
                         annotate_provenance)
from .backends import (CostRecord, GenerationBackend, HTTPBackend, MockBackend,
                       PromptTemplate, ResponseCache, generate, generate_batch,
                       mock_from_oracle)
from .config import RunConfig
from .correlation import (CorrelationResult, PairedSample, correlate_run,
                          kendall_tau, spearman_rho)
from .data import (Document, DownstreamExample, RankedList, load_corpus,
                   load_dataset, load_run_file, segment_corpus, write_run_file)
from .downstream import (DownstreamMetric, NormalizationPolicy, accuracy,
                         exact_match, normalize, unigram_f1)
from .e2e import E2EResult, evaluate_e2e
from .ranking import (RankingMetric, RelevanceVector, average_precision, binarize,
                      evaluate_list, hit_ratio, ndcg, parse_metrics, precision,
                      recall, reciprocal_rank)

__version__ = "0.1.0"

__all__ = [
    "CostRecord", "CorrelationResult", "Document", "DownstreamExample",
    "DownstreamMetric", "E2EResult", "GenerationBackend", "HTTPBackend",
    "MockBackend", "NormalizationPolicy", "PairedSample", "PromptTemplate",
    "RankedList", "RankingMetric", "RelevanceVector", "ResponseCache",
    "RunConfig", "accuracy", "annotate_containment", "annotate_erag",
    "annotate_llm_judge", "annotate_provenance", "average_precision",
    "binarize", "correlate_run", "evaluate_e2e", "evaluate_list",
    "exact_match", "generate", "generate_batch", "hit_ratio", "kendall_tau",
    "load_corpus", "load_dataset", "load_run_file", "mock_from_oracle",
    "ndcg", "normalize", "parse_metrics", "precision", "recall",
    "reciprocal_rank", "segment_corpus", "spearman_rho", "unigram_f1",
    "write_run_file",
]
