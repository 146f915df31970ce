"""Core domain types shared by every stage of the harness.

All values are immutable after construction and safe to share across
threads without synchronization. Construction validates the structural
invariants the rest of the code relies on, so downstream consumers never
re-check them.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .stopwords import default_stopwords

HEAD = "head"
TORSO = "torso"
TAIL = "tail"
UNASSIGNED = "unassigned"
BUCKETS = (HEAD, TORSO, TAIL)
VALID_BUCKETS = BUCKETS + (UNASSIGNED,)

CORRECT = "correct"
WRONG = "wrong"
UNINFORMATIVE = "uninformative"
RESPONSE_CLASSES = (CORRECT, WRONG, UNINFORMATIVE)


def normalize_text(raw: str) -> str:
    """Canonical comparison form: NFC-composed, lowercased, whitespace collapsed.

    Idempotent, so values may be re-normalized defensively. The second NFC
    pass keeps the result stable for the rare characters whose lowercase
    form decomposes into a recomposable sequence.
    """
    lowered = unicodedata.normalize("NFC", raw).lower()
    recomposed = unicodedata.normalize("NFC", lowered)
    return " ".join(recomposed.split())


@dataclass(frozen=True)
class QARecord:
    """One question with its accepted answers, entity, and popularity weight."""

    record_id: str
    question: str
    prompt: str
    answers: tuple[str, ...]
    entity_id: str
    popularity: float
    bucket: str = UNASSIGNED

    def __post_init__(self) -> None:
        object.__setattr__(self, "answers", tuple(self.answers))
        object.__setattr__(self, "popularity", float(self.popularity))
        if not self.record_id:
            raise ValueError("record_id must be a non-empty string")
        if not self.answers:
            raise ValueError(f"record {self.record_id!r}: answers must be non-empty")
        if any(not a for a in self.answers):
            raise ValueError(f"record {self.record_id!r}: answers contain an empty string")
        if not self.popularity >= 0:  # also rejects NaN
            raise ValueError(f"record {self.record_id!r}: popularity must be >= 0")
        if self.bucket not in VALID_BUCKETS:
            raise ValueError(f"record {self.record_id!r}: unknown bucket {self.bucket!r}")

    def with_bucket(self, bucket: str) -> "QARecord":
        return replace(self, bucket=bucket)

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "question": self.question,
            "prompt": self.prompt,
            "answers": list(self.answers),
            "entity_id": self.entity_id,
            "popularity": self.popularity,
            "bucket": self.bucket,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "QARecord":
        return cls(
            record_id=data["record_id"],
            question=data["question"],
            prompt=data["prompt"],
            answers=tuple(data["answers"]),
            entity_id=data["entity_id"],
            popularity=data["popularity"],
            bucket=data.get("bucket", UNASSIGNED),
        )


@dataclass(frozen=True)
class TokenCandidate:
    """A vocabulary token with its natural-log probability and 1-based rank."""

    token_text: str
    logprob: float
    rank: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "logprob", float(self.logprob))
        if not self.logprob <= 0.0:  # also rejects NaN
            raise ValueError(f"logprob must be <= 0, got {self.logprob!r}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")

    def to_dict(self) -> dict[str, Any]:
        return {"token": self.token_text, "logprob": self.logprob, "rank": self.rank}


def rank_candidates(pairs: Iterable[tuple[str, float]]) -> tuple[TokenCandidate, ...]:
    """Sort (token, logprob) pairs into canonical order and assign ranks.

    Highest log-probability first; ties broken by token text ascending so
    the ordering is total and identical across runs and backends.
    """
    ordered = sorted(pairs, key=lambda p: (-p[1], p[0]))
    return tuple(TokenCandidate(tok, lp, i + 1) for i, (tok, lp) in enumerate(ordered))


@dataclass(frozen=True)
class AnswerDistribution:
    """Top-k candidate list observed at one decoding step for one record."""

    record_id: str
    probe_position: int
    candidates: tuple[TokenCandidate, ...]
    greedy_completion: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.probe_position < 0:
            raise ValueError("probe_position must be >= 0")
        for i, cand in enumerate(self.candidates):
            if cand.rank != i + 1:
                raise ValueError(
                    f"candidate ranks must be 1..n without gaps; "
                    f"position {i} holds rank {cand.rank}"
                )
            if i == 0:
                continue
            prev = self.candidates[i - 1]
            if cand.logprob > prev.logprob:
                raise ValueError("candidate logprobs must be non-increasing")
            if cand.logprob == prev.logprob and cand.token_text < prev.token_text:
                raise ValueError("tied logprobs must be ordered by token text ascending")

    @property
    def k_available(self) -> int:
        return len(self.candidates)

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "probe_position": self.probe_position,
            "greedy_completion": self.greedy_completion,
            "candidates": [{"token": c.token_text, "logprob": c.logprob} for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AnswerDistribution":
        candidates = tuple(
            TokenCandidate(c["token"], c["logprob"], i + 1)
            for i, c in enumerate(data["candidates"])
        )
        return cls(
            record_id=data["record_id"],
            probe_position=data["probe_position"],
            candidates=candidates,
            greedy_completion=data["greedy_completion"],
        )


@dataclass(frozen=True)
class EvalOutcome:
    """Per-record scoring result for one decoding pass."""

    record_id: str
    response_class: str
    hit_rank: int | None
    final_answer: str

    def __post_init__(self) -> None:
        if self.response_class not in RESPONSE_CLASSES:
            raise ValueError(f"unknown response class {self.response_class!r}")
        if self.hit_rank is not None and self.hit_rank < 1:
            raise ValueError(f"hit_rank must be >= 1 when present, got {self.hit_rank}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "response_class": self.response_class,
            "hit_rank": self.hit_rank,
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalOutcome":
        return cls(
            record_id=data["record_id"],
            response_class=data["response_class"],
            hit_rank=data["hit_rank"],
            final_answer=data["final_answer"],
        )


@dataclass(frozen=True)
class MetricConfig:
    """Tunable constants for matching, filtering, bucketing, and probing.

    Defaults follow the evaluation conventions this harness implements: a
    3-character match rule, the "uns" prefix filter, a 10% head and 40%
    torso split, and probing the first generated token.
    """

    k_values: tuple[int, ...] = (1, 5, 50, 100)
    min_match_len: int = 3
    uninformative_prefixes: tuple[str, ...] = ("uns",)
    min_token_len: int = 3
    stopword_list: frozenset[str] = field(default_factory=default_stopwords)
    head_fraction: float = 0.10
    torso_fraction: float = 0.40
    probe_position: int = 0
    max_completion_tokens: int = 32
    repetition_max_period: int = 8
    repetition_min_repeats: int = 4
    repetition_min_coverage: float = 0.8
    always_recover: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_values", tuple(self.k_values))
        object.__setattr__(self, "uninformative_prefixes", tuple(self.uninformative_prefixes))
        object.__setattr__(self, "stopword_list", frozenset(self.stopword_list))
        if not self.k_values:
            raise ValueError("k_values must be non-empty")
        if any(k < 1 for k in self.k_values):
            raise ValueError("k_values must be positive")
        if any(b <= a for a, b in zip(self.k_values, self.k_values[1:])):
            raise ValueError("k_values must be strictly increasing")
        if self.min_match_len < 1:
            raise ValueError("min_match_len must be >= 1")
        if self.min_token_len < 1:
            raise ValueError("min_token_len must be >= 1")
        if any(not p for p in self.uninformative_prefixes):
            raise ValueError("uninformative prefixes must be non-empty strings")
        if not 0 < self.head_fraction <= 1:
            raise ValueError("head_fraction must be in (0, 1]")
        if not 0 <= self.torso_fraction < 1:
            raise ValueError("torso_fraction must be in [0, 1)")
        if self.head_fraction + self.torso_fraction > 1:
            raise ValueError("head_fraction + torso_fraction must not exceed 1")
        if self.probe_position < 0:
            raise ValueError("probe_position must be >= 0")
        if self.max_completion_tokens < 1:
            raise ValueError("max_completion_tokens must be >= 1")
        if self.repetition_max_period < 1:
            raise ValueError("repetition_max_period must be >= 1")
        if self.repetition_min_repeats < 1:
            raise ValueError("repetition_min_repeats must be >= 1")
        if not 0 < self.repetition_min_coverage <= 1:
            raise ValueError("repetition_min_coverage must be in (0, 1]")

    @property
    def max_k(self) -> int:
        return self.k_values[-1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "k_values": list(self.k_values),
            "min_match_len": self.min_match_len,
            "uninformative_prefixes": list(self.uninformative_prefixes),
            "min_token_len": self.min_token_len,
            "stopword_list": sorted(self.stopword_list),
            "head_fraction": self.head_fraction,
            "torso_fraction": self.torso_fraction,
            "probe_position": self.probe_position,
            "max_completion_tokens": self.max_completion_tokens,
            "repetition_max_period": self.repetition_max_period,
            "repetition_min_repeats": self.repetition_min_repeats,
            "repetition_min_coverage": self.repetition_min_coverage,
            "always_recover": self.always_recover,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricConfig":
        return cls(
            k_values=tuple(data["k_values"]),
            min_match_len=data["min_match_len"],
            uninformative_prefixes=tuple(data["uninformative_prefixes"]),
            min_token_len=data["min_token_len"],
            stopword_list=frozenset(data["stopword_list"]),
            head_fraction=data["head_fraction"],
            torso_fraction=data["torso_fraction"],
            probe_position=data["probe_position"],
            max_completion_tokens=data["max_completion_tokens"],
            repetition_max_period=data["repetition_max_period"],
            repetition_min_repeats=data["repetition_min_repeats"],
            repetition_min_coverage=data["repetition_min_coverage"],
            always_recover=data["always_recover"],
        )
