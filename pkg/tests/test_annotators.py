"""Annotation scheme tests: per-document labeling under all four schemes."""

import random

import pytest

from erag.annotators import (AnnotationRun, annotate_containment, annotate_erag,
                             annotate_llm_judge, annotate_provenance,
                             read_annotations, write_annotations)
from erag.backends import (DEFAULT_JUDGE_TEMPLATE, PromptTemplate, ResponseCache,
                           mock_from_oracle)
from erag.data import Document, DownstreamExample, RankedList
from erag.downstream import DownstreamMetric
from erag.errors import BackendUnavailableError, UnsupportedTaskError
from erag.ranking import RelevanceVector
from test_backends import FlakyBackend

PLAIN = PromptTemplate(template_id="plain", body="{query}\n{documents}",
                       document_separator="\n", instruction_header="answer")
EM = DownstreamMetric("exact_match")
F1 = DownstreamMetric("unigram_f1")


def make_example(qid="q1", answer="paris", task="extractive_qa", provenance=()):
    return DownstreamExample(qid, f"question for {qid}", (answer,), task,
                             tuple(provenance))


def make_world(doc_specs):
    """doc_specs: list of (doc_id, text, source_article)."""
    docs = {doc_id: Document(doc_id, "", text, src) for doc_id, text, src in doc_specs}
    entries = tuple((doc_id, float(len(doc_specs) - i))
                    for i, (doc_id, _, _) in enumerate(doc_specs))
    ranked = RankedList("q1", entries, "test")
    return docs, ranked


# ---- erag ------------------------------------------------------------------------


def test_erag_labels_from_mock():
    docs, ranked = make_world([(f"d{i}", f"text {i}", "a") for i in (1, 2, 3)])
    backend = mock_from_oracle({("q1", ("d2",)): "paris"}, fallback="dunno")
    example = make_example()
    v = annotate_erag(example, ranked, docs, backend, PLAIN, EM)
    assert v.labels == (0.0, 1.0, 0.0)
    assert v.scheme == "erag" and v.label_kind == "binary"
    assert v.doc_ids == ranked.doc_ids
    assert v.backend_id == backend.backend_id
    assert v.template_id == PLAIN.template_id


def test_erag_graded_labels_with_f1():
    docs, ranked = make_world([(f"d{i}", f"text {i}", "a") for i in (1, 2, 3)])
    backend = mock_from_oracle({
        ("q1", ("d1",)): "paris france",   # p=1/2, r=1 -> f1=2/3
        ("q1", ("d2",)): "paris",          # exact -> 1.0
        ("q1", ("d3",)): "rome",           # no overlap -> 0.0
    })
    v = annotate_erag(make_example(), ranked, docs, backend, PLAIN, F1)
    assert v.label_kind == "graded"
    assert v.labels == pytest.approx((2 / 3, 1.0, 0.0))


def test_erag_single_document_list():
    docs, ranked = make_world([("d1", "text", "a")])
    backend = mock_from_oracle({("q1", ("d1",)): "paris"})
    v = annotate_erag(make_example(), ranked, docs, backend, PLAIN, EM)
    assert v.labels == (1.0,)


def test_erag_issues_one_call_per_document_cold_none_warm(tmp_path):
    docs, ranked = make_world([(f"d{i}", f"text {i}", "a") for i in range(7)])
    backend = mock_from_oracle({})
    cache = ResponseCache(tmp_path / "cache")
    annotate_erag(make_example(), ranked, docs, backend, PLAIN, EM, cache=cache)
    assert backend.calls_issued == 7
    annotate_erag(make_example(), ranked, docs, backend, PLAIN, EM, cache=cache)
    assert backend.calls_issued == 7  # warm rerun served entirely from cache


def test_erag_backend_failure_leaves_missing_label(caplog):
    docs, ranked = make_world([(f"d{i}", f"text {i}", "a") for i in (1, 2, 3)])

    class FailOnDoc(FlakyBackend):
        def complete(self, prompt, instruction, *, query="", query_id=None,
                     doc_ids=(), max_tokens=None):
            if "d2" in doc_ids:
                self._count_call()
                raise BackendUnavailableError("boom")
            return super().complete(prompt, instruction, query=query,
                                    query_id=query_id, doc_ids=doc_ids,
                                    max_tokens=max_tokens)

    failing = FailOnDoc({("q1", ("d1",)): "paris"})
    with caplog.at_level("WARNING"):
        v = annotate_erag(make_example(), ranked, docs, failing, PLAIN, EM)
    assert v.labels[0] == 1.0
    assert v.labels[1] is None
    assert not v.is_complete
    assert v.meta["missing"] == 1
    assert "d2" in caplog.text


def test_erag_unresolvable_doc_rejected():
    docs, ranked = make_world([("d1", "text", "a")])
    with pytest.raises(ValueError):
        annotate_erag(make_example(), RankedList("q1", (("dX", 1.0),)), docs,
                      mock_from_oracle({}), PLAIN, EM)


# ---- containment -------------------------------------------------------------------


def test_containment_examples():
    docs, ranked = make_world([
        ("d1", "Paris is the capital of France", "a"),
        ("d2", "Weather patterns in the Atlantic", "a"),
    ])
    v = annotate_containment(make_example(answer="Paris"), ranked, docs)
    assert v.labels == (1.0, 0.0)
    assert v.scheme == "containment" and v.label_kind == "binary"


def test_containment_normalizes_both_sides():
    docs, ranked = make_world([("d1", "visiting new-york today", "a")])
    v = annotate_containment(make_example(answer="New York"), ranked, docs)
    assert v.labels == (1.0,)


def test_containment_is_token_level_not_substring():
    docs, ranked = make_world([("d1", "the earth is round", "a")])
    v = annotate_containment(make_example(answer="art"), ranked, docs)
    assert v.labels == (0.0,)


def test_containment_rejects_non_extractive_tasks():
    docs, ranked = make_world([("d1", "text", "a")])
    example = DownstreamExample("q1", "claim", ("SUPPORTS",), "classification")
    with pytest.raises(UnsupportedTaskError):
        annotate_containment(example, ranked, docs)


def test_containment_at_least_as_permissive_as_exact_span():
    rng = random.Random(41)
    vocab = [f"v{i}" for i in range(20)]
    for _ in range(100):
        answer = " ".join(rng.choices(vocab, k=rng.randrange(1, 3)))
        pre = " ".join(rng.choices(vocab, k=rng.randrange(0, 5)))
        post = " ".join(rng.choices(vocab, k=rng.randrange(0, 5)))
        text = f"{pre} {answer} {post}".strip()
        docs, ranked = make_world([("d1", text, "a")])
        v = annotate_containment(make_example(answer=answer), ranked, docs)
        assert v.labels == (1.0,)


# ---- provenance ---------------------------------------------------------------------


def test_provenance_article_level_labels():
    docs, ranked = make_world([
        ("A-0", "text one", "A"),
        ("B-3", "text two", "B"),
        ("A-7", "text three", "A"),
    ])
    v = annotate_provenance(make_example(provenance=["A"]), ranked, docs)
    assert v.labels == (1.0, 0.0, 1.0)


def test_provenance_empty_list_all_zero():
    docs, ranked = make_world([("A-0", "x", "A"), ("B-0", "y", "B")])
    v = annotate_provenance(make_example(provenance=[]), ranked, docs)
    assert v.labels == (0.0, 0.0)


def test_provenance_unknown_article_warns_and_zeroes(caplog):
    docs, _ = make_world([("A-0", "x", "A")])
    ranked = RankedList("q1", (("A-0", 2.0), ("GONE-0", 1.0)))
    with caplog.at_level("WARNING"):
        v = annotate_provenance(make_example(provenance=["A", "GONE"]), ranked, docs)
    assert v.labels == (1.0, 0.0)
    assert "GONE-0" in caplog.text


# ---- llm judge ----------------------------------------------------------------------


def judge_backend(verdicts):
    oracle = {("q1", (doc_id,)): verdict for doc_id, verdict in verdicts.items()}
    return mock_from_oracle(oracle, fallback="huh")


def test_judge_parses_verdicts_and_counts_failures():
    docs, ranked = make_world([(f"d{i}", f"text {i}", "a") for i in (1, 2, 3)])
    backend = judge_backend({
        "d1": "relevant",
        "d2": "Not relevant.",
        "d3": "as an assistant I think this could be related",
    })
    v = annotate_llm_judge(make_example(), ranked, docs, backend, DEFAULT_JUDGE_TEMPLATE)
    assert v.labels == (1.0, 0.0, 0.0)
    assert v.label_kind == "binary"
    assert v.meta["parse_failures"] == 1


def test_judge_prefix_match_tolerates_trailing_prose():
    docs, ranked = make_world([("d1", "text", "a"), ("d2", "text2", "a")])
    backend = judge_backend({"d1": "Relevant, because it names the capital.",
                             "d2": "irrelevant to the query"})
    v = annotate_llm_judge(make_example(), ranked, docs, backend, DEFAULT_JUDGE_TEMPLATE)
    assert v.labels == (1.0, 0.0)
    assert v.meta["parse_failures"] == 0


# ---- shared invariants -----------------------------------------------------------------


def test_all_schemes_commute_with_list_permutation():
    rng = random.Random(43)
    specs = [("d1", "alpha paris beta", "A"), ("d2", "gamma delta", "B"),
             ("d3", "paris", "A"), ("d4", "epsilon", "C")]
    docs = {s[0]: Document(s[0], "", s[1], s[2]) for s in specs}
    example = make_example(provenance=["A"])
    erag_backend = mock_from_oracle(
        {("q1", (d,)): ("paris" if "paris" in docs[d].text else "no") for d in docs})
    judge = mock_from_oracle(
        {("q1", (d,)): ("relevant" if "paris" in docs[d].text else "not relevant")
         for d in docs})

    def annotate_all(ranked):
        return {
            "erag": annotate_erag(example, ranked, docs, erag_backend, PLAIN, EM),
            "containment": annotate_containment(example, ranked, docs),
            "provenance": annotate_provenance(example, ranked, docs),
            "llm_judge": annotate_llm_judge(example, ranked, docs, judge,
                                            DEFAULT_JUDGE_TEMPLATE),
        }

    base_ids = [s[0] for s in specs]
    base = annotate_all(RankedList("q1", tuple((d, float(9 - i))
                                               for i, d in enumerate(base_ids))))
    for _ in range(5):
        perm = base_ids[:]
        rng.shuffle(perm)
        permuted = annotate_all(RankedList("q1", tuple((d, float(9 - i))
                                                       for i, d in enumerate(perm))))
        for scheme, vector in permuted.items():
            base_by_doc = dict(zip(base_ids, base[scheme].labels))
            assert list(vector.labels) == [base_by_doc[d] for d in perm], scheme


def test_annotation_run_validation():
    backend = mock_from_oracle({})
    AnnotationRun("containment")
    AnnotationRun("provenance")
    AnnotationRun("erag", backend=backend, downstream_metric=EM)
    AnnotationRun("llm_judge", backend=backend, judge_template=DEFAULT_JUDGE_TEMPLATE)
    with pytest.raises(ValueError):
        AnnotationRun("erag", backend=backend)
    with pytest.raises(ValueError):
        AnnotationRun("llm_judge", backend=backend)
    with pytest.raises(ValueError):
        AnnotationRun("bogus")


def test_annotations_round_trip_including_missing_labels(tmp_path):
    vectors = [
        RelevanceVector("q1", (1.0, 0.0), "erag", "binary", doc_ids=("d1", "d2"),
                        backend_id="b", template_id="t", meta={"cost": {
                            "prompt_tokens": 4, "output_tokens": 2,
                            "simulated_flops": 32.0}}),
        RelevanceVector("q2", (0.5, None), "erag", "graded", doc_ids=("d1", "d3"),
                        backend_id="b", template_id="t", meta={"missing": 1}),
    ]
    path = tmp_path / "ann.jsonl"
    write_annotations(path, vectors)
    loaded = read_annotations(path)
    assert loaded == vectors
    assert not loaded[1].is_complete
