"""Core type invariants: normalization, ordering, round-trip serialization."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from latent_recall import (
    AnswerDistribution,
    EvalOutcome,
    MetricConfig,
    QARecord,
    TokenCandidate,
    normalize_text,
    rank_candidates,
)


def test_normalize_strips_and_lowercases():
    assert normalize_text("  Olympia ") == "olympia"


def test_normalize_empty_identity():
    assert normalize_text("") == ""


def test_normalize_collapses_whitespace():
    assert normalize_text("New   York") == "new york"


def test_normalize_handles_tabs_and_newlines():
    assert normalize_text("a\t b\n\nc") == "a b c"


@given(st.text())
def test_normalize_idempotent(text):
    once = normalize_text(text)
    assert normalize_text(once) == once


@pytest.mark.parametrize(
    "tricky",
    ["İstanbul  CITY", "ẞharp", "Å ring", "i̇dot", "Ångström"],
)
def test_normalize_idempotent_on_unicode_edge_cases(tricky):
    once = normalize_text(tricky)
    assert normalize_text(once) == once


def test_rank_candidates_orders_by_logprob_then_token():
    ranked = rank_candidates([("b", -1.0), ("a", -1.0), ("c", -0.5)])
    assert [(c.token_text, c.rank) for c in ranked] == [("c", 1), ("a", 2), ("b", 3)]


@given(
    st.lists(
        st.tuples(st.text(max_size=5), st.floats(min_value=-50, max_value=0, allow_nan=False)),
        min_size=1,
        max_size=12,
    ),
    st.randoms(),
)
def test_rank_candidates_total_order(pairs, rng):
    baseline = rank_candidates(pairs)
    shuffled = list(pairs)
    rng.shuffle(shuffled)
    assert rank_candidates(shuffled) == baseline


def test_token_candidate_rejects_positive_logprob():
    with pytest.raises(ValueError):
        TokenCandidate("x", 0.5, 1)


def test_token_candidate_rejects_nan_logprob():
    with pytest.raises(ValueError):
        TokenCandidate("x", float("nan"), 1)


def test_token_candidate_rejects_rank_zero():
    with pytest.raises(ValueError):
        TokenCandidate("x", -1.0, 0)


def test_record_rejects_empty_answers():
    with pytest.raises(ValueError):
        QARecord("r1", "q", "p", (), "e1", 1.0)
    with pytest.raises(ValueError):
        QARecord("r1", "q", "p", ("ok", ""), "e1", 1.0)


def test_record_rejects_negative_popularity():
    with pytest.raises(ValueError):
        QARecord("r1", "q", "p", ("a",), "e1", -1.0)


def test_record_rejects_unknown_bucket():
    with pytest.raises(ValueError):
        QARecord("r1", "q", "p", ("a",), "e1", 1.0, bucket="middle")


def test_distribution_rejects_rank_gaps():
    cands = (TokenCandidate("a", -0.1, 1), TokenCandidate("b", -0.2, 3))
    with pytest.raises(ValueError):
        AnswerDistribution("r1", 0, cands, "a")


def test_distribution_rejects_increasing_logprobs():
    cands = (TokenCandidate("a", -1.0, 1), TokenCandidate("b", -0.5, 2))
    with pytest.raises(ValueError):
        AnswerDistribution("r1", 0, cands, "a")


def test_distribution_rejects_tie_order_violation():
    cands = (TokenCandidate("b", -1.0, 1), TokenCandidate("a", -1.0, 2))
    with pytest.raises(ValueError):
        AnswerDistribution("r1", 0, cands, "b")


def test_metric_config_requires_increasing_k():
    with pytest.raises(ValueError):
        MetricConfig(k_values=(5, 5))
    with pytest.raises(ValueError):
        MetricConfig(k_values=(10, 1))


def test_metric_config_fraction_bounds():
    with pytest.raises(ValueError):
        MetricConfig(head_fraction=0.0)
    with pytest.raises(ValueError):
        MetricConfig(head_fraction=0.7, torso_fraction=0.4)


def _roundtrip(value, from_dict):
    first = json.dumps(value.to_dict(), sort_keys=True)
    again = from_dict(json.loads(first))
    second = json.dumps(again.to_dict(), sort_keys=True)
    assert again == value
    assert second == first


def test_record_roundtrip_is_byte_identical():
    record = QARecord("r1", "q?", "P: q?", ("Olympia", "WA capital"), "e9", 120.0, "head")
    _roundtrip(record, QARecord.from_dict)


def test_distribution_roundtrip_is_byte_identical():
    dist = AnswerDistribution(
        "r1",
        0,
        (TokenCandidate(" Olympia", -0.25, 1), TokenCandidate(" Seattle", -1.5, 2)),
        " Olympia",
    )
    _roundtrip(dist, AnswerDistribution.from_dict)


def test_outcome_roundtrip_is_byte_identical():
    _roundtrip(EvalOutcome("r1", "correct", 2, " Olympia"), EvalOutcome.from_dict)
    _roundtrip(EvalOutcome("r2", "uninformative", None, "unsure"), EvalOutcome.from_dict)


def test_config_roundtrip_is_byte_identical():
    config = MetricConfig(k_values=(1, 2, 7), stopword_list=frozenset({"the", "and"}))
    _roundtrip(config, MetricConfig.from_dict)


def test_random_distribution_roundtrips():
    rng = random.Random(7)
    for _ in range(50):
        pairs = [
            ("tok%d" % i, -rng.random() * 10)
            for i in range(rng.randint(1, 8))
        ]
        dist = AnswerDistribution("rX", 0, rank_candidates(pairs), "text")
        _roundtrip(dist, AnswerDistribution.from_dict)
