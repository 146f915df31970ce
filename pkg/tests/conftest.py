"""Shared builders: scripted gap datasets and distribution helpers."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from latent_recall import (
    AnswerDistribution,
    GapModelSpec,
    QARecord,
    ScriptedReply,
    TokenCandidate,
    partition_by_popularity,
    write_dataset,
)


def make_dist(record_id, pairs, greedy, probe_position=0):
    """AnswerDistribution from (token, logprob) pairs already in canonical order."""
    candidates = tuple(TokenCandidate(t, lp, i + 1) for i, (t, lp) in enumerate(pairs))
    return AnswerDistribution(record_id, probe_position, candidates, greedy)


def build_gap_fixture(n_records: int = 200, gap_tenths: int = 3):
    """Dataset plus scripted backend with a known storage-expression gap.

    gap_tenths/10 of the records answer "unsure" greedily while hiding the
    matching token at rank 2; the rest answer correctly at rank 1. Gap
    records are spread evenly (record i is a gap iff i % 10 < gap_tenths),
    so the overall gap fraction is exactly gap_tenths/10 and any bucket
    whose size is a multiple of ten carries that same fraction. Returns
    partitioned records and the GapModelSpec.
    """
    assert 0 <= gap_tenths <= 10
    records = []
    scripts = {}
    for i in range(n_records):
        answer = f"Capital{i:04d}"
        prompt = f"Q{i:04d}: What is the capital of region {i}? If unsure, say unsure. A:"
        records.append(
            QARecord(
                record_id=f"q{i:04d}",
                question=f"What is the capital of region {i}?",
                prompt=prompt,
                answers=(answer,),
                entity_id=f"e{i:04d}",
                popularity=float(n_records - i),
            )
        )
        if i % 10 < gap_tenths:
            scripts[prompt] = ScriptedReply(
                greedy_answer="unsure",
                candidates=(("unsure", -0.05), (f" {answer}", -0.8), (" Harborview", -2.5)),
                continuations={f" {answer}": " is the capital."},
            )
        else:
            scripts[prompt] = ScriptedReply(
                greedy_answer=f" {answer} is the capital.",
                candidates=((f" {answer}", -0.05), (" Harborview", -1.0), ("unsure", -2.5)),
            )
    default = ScriptedReply(
        greedy_answer="unsure",
        candidates=(("unsure", -0.1), (" Harborview", -1.0), (" Westbrook", -2.0)),
    )
    spec = GapModelSpec(default=default, scripts=scripts)
    return partition_by_popularity(records, 0.10, 0.40), spec


def write_gap_files(directory: Path, n_records: int = 200, gap_tenths: int = 3):
    """Materialize a gap fixture as dataset JSONL + backend spec JSON files."""
    records, spec = build_gap_fixture(n_records, gap_tenths)
    dataset_path = directory / f"dataset_n{n_records}_g{gap_tenths}.jsonl"
    spec_path = directory / f"gapspec_n{n_records}_g{gap_tenths}.json"
    write_dataset(records, dataset_path)
    spec_path.write_text(json.dumps(spec.to_dict(), indent=2), encoding="utf-8")
    return dataset_path, spec_path


@pytest.fixture
def gap_files(tmp_path):
    def _build(n_records: int = 200, gap_tenths: int = 3):
        return write_gap_files(tmp_path, n_records, gap_tenths)

    return _build
