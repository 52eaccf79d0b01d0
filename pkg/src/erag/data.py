"""Dataset, corpus, and retrieval-run ingestion into the canonical data model.

All ingestion is single-pass streaming per file. The produced values are
frozen dataclasses and safe to share across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import MalformedRecordError
from .fileio import read_jsonl, write_text_atomic

log = logging.getLogger(__name__)

TASKS = ("extractive_qa", "classification", "long_form")

DEFAULT_MAX_PASSAGE_WORDS = 100
DEFAULT_TITLE_SEPARATOR = " "


@dataclass(frozen=True)
class DownstreamExample:
    """A query, its acceptable gold outputs, and its task type."""

    query_id: str
    query_text: str
    gold_outputs: tuple[str, ...]
    task: str = "extractive_qa"
    provenance_doc_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not self.gold_outputs:
            raise ValueError(f"example {self.query_id!r} has no gold outputs")


@dataclass(frozen=True)
class Document:
    """One retrievable passage; text already carries the article title prefix."""

    doc_id: str
    title: str
    text: str
    source_article_id: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class RankedList:
    """Ordered retrieval results for one query: (doc_id, retrieval_score) pairs."""

    query_id: str
    entries: tuple[tuple[str, float], ...]
    retriever_name: str = ""

    def __post_init__(self):
        seen = set()
        for doc_id, _ in self.entries:
            if doc_id in seen:
                raise ValueError(f"duplicate doc_id {doc_id!r} in list for query {self.query_id!r}")
            seen.add(doc_id)

    @classmethod
    def from_scores(cls, query_id: str, entries: Iterable[tuple[str, float]],
                    retriever_name: str = "") -> "RankedList":
        """Build a list from unordered entries; descending score, stable on ties."""
        ordered = sorted(enumerate(entries), key=lambda item: (-item[1][1], item[0]))
        return cls(query_id, tuple(entry for _, entry in ordered), retriever_name)

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(doc_id for doc_id, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def load_dataset(path, format: str = "kilt_jsonl", task: str = "extractive_qa",
                 label_set: Sequence[str] | None = None) -> list[DownstreamExample]:
    """Load a KILT-style JSONL dataset.

    Each line holds ``id``, ``input``, and ``output`` (a list of objects with
    ``answer`` and an optional ``provenance`` list of ``wikipedia_id`` entries).
    Records without any usable gold output are skipped with a warning; lines
    that cannot be parsed raise ``MalformedRecordError`` with the line number.
    """
    if format != "kilt_jsonl":
        raise ValueError(f"unsupported dataset format {format!r}")
    if task == "classification" and not label_set:
        raise ValueError("classification datasets require a label_set")

    labels = set(label_set) if label_set else None
    examples: list[DownstreamExample] = []
    seen_ids: set[str] = set()
    for line_no, rec in read_jsonl(path):
        if "id" not in rec or "input" not in rec:
            missing = "id" if "id" not in rec else "input"
            raise MalformedRecordError(path, line_no, f"missing field {missing!r}")
        query_id = str(rec["id"])
        if query_id in seen_ids:
            raise MalformedRecordError(path, line_no, f"duplicate query id {query_id!r}")
        seen_ids.add(query_id)

        outputs = rec.get("output") or []
        if not isinstance(outputs, list):
            raise MalformedRecordError(path, line_no, "field 'output' must be a list")
        answers: list[str] = []
        provenance: list[str] = []
        for out in outputs:
            if not isinstance(out, dict):
                raise MalformedRecordError(path, line_no, "entries of 'output' must be objects")
            answer = out.get("answer")
            if isinstance(answer, str) and answer.strip() and answer not in answers:
                answers.append(answer)
            for prov in out.get("provenance") or []:
                if isinstance(prov, dict) and prov.get("wikipedia_id") is not None:
                    wid = str(prov["wikipedia_id"])
                    if wid not in provenance:
                        provenance.append(wid)

        if not answers:
            log.warning("%s:%d: record %r has no gold output, skipped", path, line_no, query_id)
            continue
        if labels is not None and any(a not in labels for a in answers):
            log.warning("%s:%d: record %r has gold output outside the label set, skipped",
                        path, line_no, query_id)
            continue
        examples.append(DownstreamExample(
            query_id=query_id,
            query_text=str(rec["input"]),
            gold_outputs=tuple(answers),
            task=task,
            provenance_doc_ids=tuple(provenance),
        ))
    return examples


def segment_corpus(articles: Iterable[tuple[str, str, str]],
                   max_words: int = DEFAULT_MAX_PASSAGE_WORDS,
                   title_separator: str = DEFAULT_TITLE_SEPARATOR) -> Iterator[Document]:
    """Split each (article_id, title, body) into consecutive passages.

    A passage holds at most ``max_words`` whitespace-delimited words, the
    passage text is prefixed with the article title, and the doc id is
    ``<article_id>-<zero-based passage index>``. Empty bodies yield nothing.
    """
    if max_words < 1:
        raise ValueError("max_words must be positive")
    for article_id, title, body in articles:
        words = body.split()
        for index, start in enumerate(range(0, len(words), max_words)):
            passage = " ".join(words[start:start + max_words])
            text = f"{title}{title_separator}{passage}" if title else passage
            yield Document(
                doc_id=f"{article_id}-{index}",
                title=title,
                text=text,
                source_article_id=article_id,
            )


def iter_corpus_articles(path) -> Iterator[tuple[str, str, str]]:
    """Stream (article_id, title, body) triples from a corpus JSONL file."""
    for line_no, rec in read_jsonl(path):
        if "id" not in rec:
            raise MalformedRecordError(path, line_no, "missing field 'id'")
        yield str(rec["id"]), str(rec.get("title") or ""), str(rec.get("text") or "")


def load_corpus(path, max_words: int = DEFAULT_MAX_PASSAGE_WORDS,
                title_separator: str = DEFAULT_TITLE_SEPARATOR) -> dict[str, Document]:
    """Segment a corpus file and index the passages by doc_id."""
    corpus: dict[str, Document] = {}
    for doc in segment_corpus(iter_corpus_articles(path), max_words, title_separator):
        if doc.doc_id in corpus:
            raise ValueError(f"duplicate doc_id {doc.doc_id!r} in corpus {path}")
        corpus[doc.doc_id] = doc
    return corpus


def load_run_file(path, depth: int) -> list[RankedList]:
    """Parse a six-column run file (qid Q0 docid rank score tag).

    Returns one RankedList per query in first-seen order, each truncated to
    ``depth`` entries and ordered by the rank column. Rank gaps, duplicate
    (query, doc) pairs, and non-numeric fields raise ``MalformedRecordError``.
    """
    if depth < 1:
        raise ValueError("depth must be positive")

    per_query: dict[str, list[tuple[int, str, float]]] = {}
    tags: dict[str, str] = {}
    seen_pairs: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 6:
                raise MalformedRecordError(path, line_no, f"expected 6 columns, found {len(cols)}")
            qid, _, doc_id, rank_s, score_s, tag = cols
            try:
                rank = int(rank_s)
            except ValueError:
                raise MalformedRecordError(path, line_no, f"non-integer rank {rank_s!r}") from None
            try:
                score = float(score_s)
            except ValueError:
                raise MalformedRecordError(path, line_no, f"non-numeric score {score_s!r}") from None
            if (qid, doc_id) in seen_pairs:
                raise MalformedRecordError(
                    path, line_no, f"duplicate document {doc_id!r} for query {qid!r}")
            seen_pairs.add((qid, doc_id))
            per_query.setdefault(qid, []).append((rank, doc_id, score))
            tags.setdefault(qid, tag)

    lists: list[RankedList] = []
    for qid, rows in per_query.items():
        rows.sort(key=lambda row: row[0])
        ranks = [rank for rank, _, _ in rows]
        expected = list(range(ranks[0], ranks[0] + len(ranks)))
        if ranks != expected:
            raise MalformedRecordError(
                path, 0, f"query {qid!r} has rank gaps or duplicate ranks: {ranks}")
        entries = tuple((doc_id, score) for _, doc_id, score in rows[:depth])
        lists.append(RankedList(qid, entries, tags[qid]))
    return lists


def write_run_file(lists: Iterable[RankedList], path) -> None:
    """Serialize ranked lists in the six-column run format, ranks renumbered from 1."""
    lines = []
    for ranked in lists:
        tag = ranked.retriever_name or "run"
        for rank, (doc_id, score) in enumerate(ranked.entries, start=1):
            lines.append(f"{ranked.query_id} Q0 {doc_id} {rank} {score!r} {tag}")
    write_text_atomic(path, "".join(line + "\n" for line in lines))
