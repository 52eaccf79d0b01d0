"""Run configuration: a single serializable document driving every pipeline stage.

A config replayed on identical inputs reproduces identical reports with the
mock backend, so every field that influences output lives here (and the report
echoes the config plus its hash).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .backends import (DEFAULT_GENERATION_TEMPLATE, DEFAULT_JUDGE_TEMPLATE,
                       BACKEND_KINDS, PromptTemplate, RetryPolicy)
from .data import DEFAULT_MAX_PASSAGE_WORDS, DEFAULT_TITLE_SEPARATOR, TASKS
from .downstream import METRIC_NAMES as DOWNSTREAM_METRIC_NAMES
from .downstream import NormalizationPolicy
from .ranking import SCHEMES, parse_metrics

SCHEMA_VERSION = 1

DEFAULT_METRICS = ("precision", "recall", "map", "mrr", "ndcg", "hit_ratio")


@dataclass(frozen=True)
class DatasetConfig:
    path: str
    format: str = "kilt_jsonl"
    task: str = "extractive_qa"
    label_set: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")


@dataclass(frozen=True)
class CorpusConfig:
    path: str
    max_passage_words: int = DEFAULT_MAX_PASSAGE_WORDS
    title_separator: str = DEFAULT_TITLE_SEPARATOR


@dataclass(frozen=True)
class RunFileConfig:
    path: str
    depth: int = 50

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be positive")


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "mock"
    url: str = ""
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    max_parallel: int = 8
    retry: RetryPolicy = RetryPolicy()
    temperature: float = 0.0
    max_tokens: int | None = None
    context_limit: int | None = None
    timeout: float = 60.0
    oracle_path: str | None = None
    fallback: str = "unknown"

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    corpus: CorpusConfig
    run: RunFileConfig
    out_dir: str
    schema_version: int = SCHEMA_VERSION
    schemes: tuple[str, ...] = ("erag",)
    metrics: tuple[str, ...] = DEFAULT_METRICS
    downstream_metric: str = "exact_match"
    normalization: NormalizationPolicy = NormalizationPolicy()
    backend: BackendSettings = BackendSettings()
    generation_template: PromptTemplate = DEFAULT_GENERATION_TEMPLATE
    judge_template: PromptTemplate = DEFAULT_JUDGE_TEMPLATE
    binarize_threshold: float | None = None
    fail_fast: bool = False
    cache_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(
                f"config schema_version {self.schema_version} unsupported "
                f"(expected {SCHEMA_VERSION})")
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise ValueError(f"unknown scheme {scheme!r}")
        if self.downstream_metric not in DOWNSTREAM_METRIC_NAMES:
            raise ValueError(f"unknown downstream metric {self.downstream_metric!r}")
        parse_metrics(list(self.metrics))  # validates names and cutoffs

    # ---- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dataset": {
                "path": self.dataset.path,
                "format": self.dataset.format,
                "task": self.dataset.task,
                "label_set": list(self.dataset.label_set) if self.dataset.label_set else None,
            },
            "corpus": {
                "path": self.corpus.path,
                "max_passage_words": self.corpus.max_passage_words,
                "title_separator": self.corpus.title_separator,
            },
            "run": {"path": self.run.path, "depth": self.run.depth},
            "schemes": list(self.schemes),
            "metrics": list(self.metrics),
            "downstream_metric": self.downstream_metric,
            "normalization": self.normalization.as_dict(),
            "backend": {
                "kind": self.backend.kind,
                "url": self.backend.url,
                "model": self.backend.model,
                "api_key_env": self.backend.api_key_env,
                "max_parallel": self.backend.max_parallel,
                "retry": self.backend.retry.as_dict(),
                "temperature": self.backend.temperature,
                "max_tokens": self.backend.max_tokens,
                "context_limit": self.backend.context_limit,
                "timeout": self.backend.timeout,
                "oracle_path": self.backend.oracle_path,
                "fallback": self.backend.fallback,
            },
            "templates": {
                "generation": self.generation_template.as_dict(),
                "judge": self.judge_template.as_dict(),
            },
            "binarize_threshold": self.binarize_threshold,
            "fail_fast": self.fail_fast,
            "cache_dir": self.cache_dir,
            "out_dir": self.out_dir,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True),
                              encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "RunConfig":
        def resolve(value):
            if value is None or value == "":
                return value
            path = Path(value)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return str(path)

        dataset = data.get("dataset") or {}
        corpus = data.get("corpus") or {}
        run = data.get("run") or {}
        backend = data.get("backend") or {}
        templates = data.get("templates") or {}
        retry = backend.get("retry") or {}
        label_set = dataset.get("label_set")

        return cls(
            schema_version=int(data.get("schema_version", SCHEMA_VERSION)),
            dataset=DatasetConfig(
                path=resolve(dataset["path"]),
                format=dataset.get("format", "kilt_jsonl"),
                task=dataset.get("task", "extractive_qa"),
                label_set=tuple(label_set) if label_set else None,
            ),
            corpus=CorpusConfig(
                path=resolve(corpus["path"]),
                max_passage_words=int(corpus.get("max_passage_words",
                                                 DEFAULT_MAX_PASSAGE_WORDS)),
                title_separator=corpus.get("title_separator", DEFAULT_TITLE_SEPARATOR),
            ),
            run=RunFileConfig(path=resolve(run["path"]), depth=int(run.get("depth", 50))),
            schemes=tuple(data.get("schemes") or ("erag",)),
            metrics=tuple(data.get("metrics") or DEFAULT_METRICS),
            downstream_metric=data.get("downstream_metric", "exact_match"),
            normalization=NormalizationPolicy.from_dict(data.get("normalization") or {}),
            backend=BackendSettings(
                kind=backend.get("kind", "mock"),
                url=backend.get("url", ""),
                model=backend.get("model", ""),
                api_key_env=backend.get("api_key_env", "OPENAI_API_KEY"),
                max_parallel=int(backend.get("max_parallel", 8)),
                retry=RetryPolicy(
                    max_attempts=int(retry.get("max_attempts", 3)),
                    base_backoff=float(retry.get("base_backoff", 0.5)),
                    multiplier=float(retry.get("multiplier", 2.0)),
                ),
                temperature=float(backend.get("temperature", 0.0)),
                max_tokens=backend.get("max_tokens"),
                context_limit=backend.get("context_limit"),
                timeout=float(backend.get("timeout", 60.0)),
                oracle_path=resolve(backend.get("oracle_path")),
                fallback=backend.get("fallback", "unknown"),
            ),
            generation_template=(PromptTemplate.from_dict(templates["generation"])
                                 if "generation" in templates
                                 else DEFAULT_GENERATION_TEMPLATE),
            judge_template=(PromptTemplate.from_dict(templates["judge"])
                            if "judge" in templates else DEFAULT_JUDGE_TEMPLATE),
            binarize_threshold=(float(data["binarize_threshold"])
                                if data.get("binarize_threshold") is not None else None),
            fail_fast=bool(data.get("fail_fast", False)),
            cache_dir=resolve(data.get("cache_dir")),
            out_dir=resolve(data["out_dir"]),
            seed=int(data.get("seed", 0)),
        )

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"config {path} must hold a mapping")
        return cls.from_dict(data, base_dir=path.parent)

    # ---- CLI overrides -----------------------------------------------------

    def with_overrides(self, *, schemes=None, metrics=None, depth=None,
                       backend_url=None, model=None, cache_dir=None,
                       out_dir=None, fail_fast=None,
                       binarize_threshold=None) -> "RunConfig":
        cfg = self
        if schemes is not None:
            cfg = replace(cfg, schemes=tuple(schemes))
        if metrics is not None:
            cfg = replace(cfg, metrics=tuple(metrics))
        if depth is not None:
            cfg = replace(cfg, run=replace(cfg.run, depth=depth))
        if backend_url is not None:
            cfg = replace(cfg, backend=replace(cfg.backend, url=backend_url))
        if model is not None:
            cfg = replace(cfg, backend=replace(cfg.backend, model=model))
        if cache_dir is not None:
            cfg = replace(cfg, cache_dir=cache_dir)
        if out_dir is not None:
            cfg = replace(cfg, out_dir=out_dir)
        if fail_fast is not None:
            cfg = replace(cfg, fail_fast=fail_fast)
        if binarize_threshold is not None:
            cfg = replace(cfg, binarize_threshold=binarize_threshold)
        return cfg
