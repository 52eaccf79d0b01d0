"""Generator abstraction: prompt templating, response cache, cost model, backends.

Two backends are provided: an OpenAI-compatible HTTP client and a deterministic
mock whose answers come from a lookup table keyed on (query id, document id set).
All parallelism lives in generate_batch; backends are shareable across threads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import httpx

from .data import Document
from .errors import BackendRejectedError, BackendUnavailableError, EragError

log = logging.getLogger(__name__)

BACKEND_KINDS = ("http_openai_compatible", "mock")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff: float = 0.5
    multiplier: float = 2.0

    def as_dict(self) -> dict:
        return {"max_attempts": self.max_attempts, "base_backoff": self.base_backoff,
                "multiplier": self.multiplier}


@dataclass(frozen=True)
class PromptTemplate:
    """Renders a query and a document list into one prompt string.

    ``body`` must contain the ``{query}`` and ``{documents}`` placeholders;
    documents are joined with ``document_separator`` in list order.
    """

    template_id: str
    body: str = "Question: {query}\n\nContext:\n{documents}\n\nAnswer:"
    document_separator: str = "\n\n"
    instruction_header: str = (
        "Answer the question using the provided context. Respond with the answer only.")

    def __post_init__(self):
        try:
            probe = self.body.format(query="\x00Q\x00", documents="\x00D\x00")
        except (KeyError, IndexError, ValueError) as exc:
            raise ValueError(
                "template body must use exactly the {query} and {documents} "
                f"placeholders (brace literals escaped): {exc}") from None
        if "\x00Q\x00" not in probe or "\x00D\x00" not in probe:
            raise ValueError("template body must contain both {query} and {documents}")

    def render(self, query: str, documents: Sequence[Document]) -> str:
        blocks = self.document_separator.join(doc.text for doc in documents)
        return self.body.format(query=query, documents=blocks)

    def as_dict(self) -> dict:
        return {"template_id": self.template_id, "body": self.body,
                "document_separator": self.document_separator,
                "instruction_header": self.instruction_header}

    @classmethod
    def from_dict(cls, data: dict) -> "PromptTemplate":
        return cls(**{key: data[key] for key in
                      ("template_id", "body", "document_separator", "instruction_header")
                      if key in data})


DEFAULT_GENERATION_TEMPLATE = PromptTemplate(template_id="generate-v1")

DEFAULT_JUDGE_TEMPLATE = PromptTemplate(
    template_id="judge-v1",
    body=("Query: {query}\n\nDocument:\n{documents}\n\n"
          "Is the document relevant to the query? Answer exactly "
          "'relevant' or 'not relevant'."),
    document_separator="\n\n",
    instruction_header=("You judge whether a document is relevant to a query. "
                        "Reply with exactly 'relevant' or 'not relevant'."),
)


@dataclass(frozen=True)
class CostRecord:
    """Token accounting for one generation; flops follow the quadratic prompt model."""

    prompt_length: int
    output_length: int
    simulated_flops: float = 0.0

    def as_dict(self) -> dict:
        return {"prompt_length": self.prompt_length, "output_length": self.output_length,
                "simulated_flops": self.simulated_flops}

    @classmethod
    def from_dict(cls, data: dict) -> "CostRecord":
        return cls(int(data["prompt_length"]), int(data["output_length"]),
                   float(data.get("simulated_flops", 0.0)))


@dataclass(frozen=True)
class GenerationResult:
    text: str | None
    cost: CostRecord | None
    cached: bool = False
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def whitespace_tokens(text: str) -> int:
    return len(text.split())


class ResponseCache:
    """Content-addressed response store: one JSON record per request hash.

    Reads are lock-free; writes are serialized and atomic (temp file + rename),
    so concurrent readers never observe a partial record. A corrupt record is
    discarded with a warning and the response regenerated.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    @staticmethod
    def request_key(backend_id: str, template_id: str, query: str,
                    doc_ids: Sequence[str]) -> str:
        payload = json.dumps(
            [backend_id, template_id,
             hashlib.sha256(query.encode("utf-8")).hexdigest(), list(doc_ids)],
            ensure_ascii=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        try:
            record = json.loads(raw)
            text = record["text"]
            cost = CostRecord.from_dict(record["cost"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            log.warning("discarding corrupt cache entry %s", path)
            with self._lock:
                self.misses += 1
                try:
                    path.unlink()
                except OSError:
                    pass
            return None
        with self._lock:
            self.hits += 1
        return {"text": text, "cost": cost}

    def put(self, key: str, backend_id: str, template_id: str, query: str,
            doc_ids: Sequence[str], text: str, cost: CostRecord) -> None:
        record = {
            "key": key,
            "backend_id": backend_id,
            "template_id": template_id,
            "query_sha256": hashlib.sha256(query.encode("utf-8")).hexdigest(),
            "doc_ids": list(doc_ids),
            "text": text,
            "cost": cost.as_dict(),
            "created_at": time.time(),
        }
        path = self._path(key)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f".{path.name}.tmp")
            tmp.write_text(json.dumps(record, sort_keys=True, ensure_ascii=False),
                           encoding="utf-8")
            tmp.replace(path)


class GenerationBackend:
    """Base backend: identity, in-flight cap, retry policy, and a call counter."""

    kind = "abstract"

    def __init__(self, backend_id: str, max_parallel: int = 8,
                 retry: RetryPolicy = RetryPolicy(), context_limit: int | None = None):
        if max_parallel < 1:
            raise ValueError("max_parallel must be positive")
        self.backend_id = backend_id
        self.max_parallel = max_parallel
        self.retry = retry
        self.context_limit = context_limit
        self._calls = 0
        self._counter_lock = threading.Lock()

    @property
    def calls_issued(self) -> int:
        """Logical generations performed (cache hits excluded, retries counted once)."""
        with self._counter_lock:
            return self._calls

    def reset_call_counter(self) -> None:
        with self._counter_lock:
            self._calls = 0

    def _count_call(self) -> None:
        with self._counter_lock:
            self._calls += 1

    def complete(self, prompt: str, instruction: str, *, query: str = "",
                 query_id: str | None = None, doc_ids: Sequence[str] = (),
                 max_tokens: int | None = None) -> tuple[str, CostRecord]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class MockBackend(GenerationBackend):
    """Deterministic lookup backend standing in for a real generator.

    Output depends only on (query id, document id set); unknown keys yield the
    fallback. Token counts are whitespace counts of the rendered prompt and the
    answer, and simulated flops follow output_length * prompt_length**2.
    """

    kind = "mock"

    def __init__(self, oracle: Mapping, fallback: str = "unknown", *,
                 max_parallel: int = 8, context_limit: int | None = None,
                 retry: RetryPolicy = RetryPolicy()):
        normalized = {}
        for (query_key, doc_ids), answer in oracle.items():
            normalized[(str(query_key), frozenset(str(d) for d in doc_ids))] = str(answer)
        digest_src = json.dumps(
            sorted([qk, sorted(ds), ans] for (qk, ds), ans in normalized.items())
            + [fallback], ensure_ascii=True)
        backend_id = "mock-" + hashlib.sha256(digest_src.encode("utf-8")).hexdigest()[:12]
        super().__init__(backend_id, max_parallel, retry, context_limit)
        self._oracle = normalized
        self.fallback = fallback

    def complete(self, prompt, instruction, *, query="", query_id=None, doc_ids=(),
                 max_tokens=None):
        self._count_call()
        key = (query_id if query_id is not None else query, frozenset(str(d) for d in doc_ids))
        text = self._oracle.get(key, self.fallback)
        prompt_tokens = whitespace_tokens(prompt)
        output_tokens = whitespace_tokens(text)
        flops = float(output_tokens) * float(prompt_tokens) ** 2
        return text, CostRecord(prompt_tokens, output_tokens, flops)


def mock_from_oracle(oracle: Mapping, fallback: str = "unknown", **kwargs) -> MockBackend:
    """Build a deterministic backend from a (query_id, doc-id-set) -> answer map."""
    return MockBackend(oracle, fallback, **kwargs)


class HTTPBackend(GenerationBackend):
    """OpenAI-compatible chat-completions client with bounded retries.

    Retries transport errors, 429, and 5xx with exponential backoff; any other
    non-2xx answer raises BackendRejectedError carrying the server message.
    Greedy decoding (temperature 0) by default so evaluation stays reproducible.
    """

    kind = "http_openai_compatible"

    def __init__(self, url: str, model: str, *, api_key: str | None = None,
                 max_parallel: int = 8, retry: RetryPolicy = RetryPolicy(),
                 timeout: float = 60.0, temperature: float = 0.0,
                 max_tokens: int | None = None, context_limit: int | None = None):
        backend_id = f"{model}@{hashlib.sha256(url.encode('utf-8')).hexdigest()[:8]}"
        super().__init__(backend_id, max_parallel, retry, context_limit)
        if "/chat/completions" in url:
            self.url = url
        else:
            self.url = url.rstrip("/") + "/v1/chat/completions"
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.max_tokens = max_tokens
        self._client = httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def complete(self, prompt, instruction, *, query="", query_id=None, doc_ids=(),
                 max_tokens=None):
        self._count_call()
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": instruction},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.temperature,
        }
        limit = max_tokens if max_tokens is not None else self.max_tokens
        if limit is not None:
            payload["max_tokens"] = limit
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        delay = self.retry.base_backoff
        last_failure: str = "no attempt made"
        for attempt in range(1, self.retry.max_attempts + 1):
            try:
                response = self._client.post(self.url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_failure = f"transport error: {exc}"
            else:
                if response.is_success:
                    return self._parse_response(response, prompt)
                if response.status_code == 429 or response.status_code >= 500:
                    last_failure = f"HTTP {response.status_code}"
                else:
                    raise BackendRejectedError(self._server_message(response))
            if attempt < self.retry.max_attempts:
                time.sleep(delay)
                delay *= self.retry.multiplier
        raise BackendUnavailableError(
            f"{self.url} failed after {self.retry.max_attempts} attempts ({last_failure})")

    def _parse_response(self, response: httpx.Response, prompt: str) -> tuple[str, CostRecord]:
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError):
            raise BackendRejectedError(
                f"{self.url}: 2xx response without choices[0].message.content") from None
        usage = data.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        if prompt_tokens is None:
            prompt_tokens = whitespace_tokens(prompt)
        if output_tokens is None:
            output_tokens = whitespace_tokens(text)
        return text, CostRecord(int(prompt_tokens), int(output_tokens), 0.0)

    @staticmethod
    def _server_message(response: httpx.Response) -> str:
        try:
            message = response.json()["error"]["message"]
        except (json.JSONDecodeError, KeyError, TypeError):
            message = response.text[:200]
        return f"HTTP {response.status_code}: {message}"


def generate(backend: GenerationBackend, template: PromptTemplate, query: str,
             documents: Sequence[Document], *, query_id: str | None = None,
             cache: ResponseCache | None = None,
             max_tokens: int | None = None) -> GenerationResult:
    """Run one generation, serving from and populating the cache when given.

    The cache key covers backend_id, template_id, the query text, and the
    ordered document ids, so model or prompt changes never produce stale hits.
    """
    doc_ids = tuple(doc.doc_id for doc in documents)
    key = None
    if cache is not None:
        key = ResponseCache.request_key(backend.backend_id, template.template_id,
                                        query, doc_ids)
        hit = cache.get(key)
        if hit is not None:
            return GenerationResult(hit["text"], hit["cost"], cached=True)
    prompt = template.render(query, documents)
    text, cost = backend.complete(prompt, template.instruction_header, query=query,
                                  query_id=query_id, doc_ids=doc_ids,
                                  max_tokens=max_tokens)
    if cache is not None:
        cache.put(key, backend.backend_id, template.template_id, query, doc_ids,
                  text, cost)
    return GenerationResult(text, cost, cached=False)


def generate_batch(backend: GenerationBackend, template: PromptTemplate,
                   requests: Iterable, *, cache: ResponseCache | None = None,
                   fail_fast: bool = False,
                   max_tokens: int | None = None) -> list[GenerationResult]:
    """Run many generations with at most backend.max_parallel in flight.

    Results come back in request order regardless of completion order. Backend
    errors are captured positionally unless fail_fast, in which case the first
    error cancels the pending requests and propagates.
    """
    normalized: list[tuple[str, tuple[Document, ...], str | None]] = []
    for req in requests:
        if len(req) == 2:
            query, documents = req
            qid = None
        else:
            query, documents, qid = req
        normalized.append((query, tuple(documents), qid))
    if not normalized:
        return []

    results: list[GenerationResult | None] = [None] * len(normalized)

    def run_one(index: int) -> None:
        query, documents, qid = normalized[index]
        try:
            results[index] = generate(backend, template, query, documents,
                                      query_id=qid, cache=cache, max_tokens=max_tokens)
        except EragError as exc:
            if fail_fast:
                raise
            results[index] = GenerationResult(None, None, error=exc)

    executor = ThreadPoolExecutor(max_workers=backend.max_parallel)
    try:
        futures = [executor.submit(run_one, i) for i in range(len(normalized))]
        done, _ = wait(futures, return_when=FIRST_EXCEPTION)
        first_error = next((f.exception() for f in done if f.exception()), None)
        if first_error is not None:
            for fut in futures:
                fut.cancel()
            raise first_error
        wait(futures)
    finally:
        executor.shutdown(wait=True, cancel_futures=True)
    return results  # type: ignore[return-value]
