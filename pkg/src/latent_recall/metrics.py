"""Retention and accuracy metrics aggregated per popularity bucket.

Hits@k asks whether a matching token sits within the top-k candidates at
the probed decoding step; accuracy judges the full greedy completion. The
two are distinct by construction, which is what makes comparing them
informative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .filtering import RESPONSE_UNINFORMATIVE, classify_response
from .matching import answer_correct, token_matches
from .types import (
    BUCKETS,
    CORRECT,
    RESPONSE_CLASSES,
    UNASSIGNED,
    UNINFORMATIVE,
    WRONG,
    AnswerDistribution,
    EvalOutcome,
    MetricConfig,
    QARecord,
)


def hit_rank(dist: AnswerDistribution, record: QARecord, config: MetricConfig) -> int | None:
    """Smallest rank whose candidate token matches any accepted answer.

    Returns None when no candidate within the available depth matches.
    """
    if dist.record_id != record.record_id:
        raise ValueError(
            f"distribution belongs to {dist.record_id!r}, record is {record.record_id!r}"
        )
    for cand in dist.candidates:
        if token_matches(cand.token_text, record.answers, config.min_match_len).matched:
            return cand.rank
    return None


def _count_hits(pairs: Iterable[tuple[int | None, int]], k: int) -> int:
    return sum(1 for rank, _ in pairs if rank is not None and rank <= k)


def compute_hits_at_k(outcomes: Sequence[tuple[int | None, int]], k: int) -> float:
    """Fraction of (hit_rank, k_available) entries whose rank is present and <= k.

    Raises when k exceeds any record's available candidate depth: the
    metric is undefined there and silently truncating would bias it.
    """
    if not outcomes:
        raise ValueError("cannot compute Hits@k over an empty outcome list")
    if k < 1:
        raise ValueError("k must be >= 1")
    min_available = min(avail for _, avail in outcomes)
    if k > min_available:
        raise ValueError(
            f"k={k} exceeds the shallowest available candidate list ({min_available}); "
            "request fewer top candidates or deepen the probe"
        )
    return _count_hits(outcomes, k) / len(outcomes)


def compute_rank_cdf(ranks: Sequence[int | None], max_rank: int) -> list[tuple[int, float]]:
    """Cumulative fraction of records with hit rank <= r, for r = 1..max_rank."""
    if not ranks:
        raise ValueError("cannot compute a rank CDF over an empty outcome list")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    counts = [0] * (max_rank + 1)
    for rank in ranks:
        if rank is not None and rank <= max_rank:
            counts[rank] += 1
    n = len(ranks)
    cdf = []
    cumulative = 0
    for r in range(1, max_rank + 1):
        cumulative += counts[r]
        cdf.append((r, cumulative / n))
    return cdf


def classify_answer(final_answer: str, record: QARecord, config: MetricConfig) -> str:
    """Three-way split of a full answer: correct, uninformative, or wrong.

    Correct takes precedence: an answer that contains the expected entity
    counts even if it also looks degenerate.
    """
    if answer_correct(final_answer, record.answers, config.min_match_len):
        return CORRECT
    if classify_response(final_answer, config) == RESPONSE_UNINFORMATIVE:
        return UNINFORMATIVE
    return WRONG


def score_record(record: QARecord, dist: AnswerDistribution, config: MetricConfig) -> EvalOutcome:
    """Score one record's greedy completion and candidate list."""
    return EvalOutcome(
        record_id=record.record_id,
        response_class=classify_answer(dist.greedy_completion, record, config),
        hit_rank=hit_rank(dist, record, config),
        final_answer=dist.greedy_completion,
    )


@dataclass(frozen=True)
class BucketMetrics:
    """Metrics for one popularity bucket (or the whole dataset)."""

    n_records: int
    hits_at: dict[int, float]
    hit_counts: dict[int, int]
    accuracy: float
    response_dist: dict[str, float]
    response_counts: dict[str, int]
    rank_cdf: tuple[tuple[int, float], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_records": self.n_records,
            "hits_at": {str(k): v for k, v in self.hits_at.items()},
            "hit_counts": {str(k): v for k, v in self.hit_counts.items()},
            "accuracy": self.accuracy,
            "response_dist": dict(self.response_dist),
            "response_counts": dict(self.response_counts),
            "rank_cdf": [[r, f] for r, f in self.rank_cdf],
        }


@dataclass(frozen=True)
class MetricsReport:
    """Per-bucket and overall metrics plus the configuration that produced them."""

    per_bucket: dict[str, BucketMetrics]
    overall: BucketMetrics
    config_echo: MetricConfig

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall": self.overall.to_dict(),
            "per_bucket": {b: m.to_dict() for b, m in self.per_bucket.items()},
            "config": self.config_echo.to_dict(),
        }


def _bucket_metrics(
    members: Sequence[tuple[QARecord, AnswerDistribution, EvalOutcome]],
    config: MetricConfig,
) -> BucketMetrics:
    n = len(members)
    pairs = [(outcome.hit_rank, dist.k_available) for _, dist, outcome in members]
    ranks = [outcome.hit_rank for _, _, outcome in members]
    hits_at: dict[int, float] = {}
    hit_counts: dict[int, int] = {}
    for k in config.k_values:
        hits_at[k] = compute_hits_at_k(pairs, k)
        hit_counts[k] = _count_hits(pairs, k)
    response_counts = {cls: 0 for cls in RESPONSE_CLASSES}
    for _, _, outcome in members:
        response_counts[outcome.response_class] += 1
    response_dist = {cls: count / n for cls, count in response_counts.items()}
    return BucketMetrics(
        n_records=n,
        hits_at=hits_at,
        hit_counts=hit_counts,
        accuracy=response_counts[CORRECT] / n,
        response_dist=response_dist,
        response_counts=response_counts,
        rank_cdf=tuple(compute_rank_cdf(ranks, config.max_k)),
    )


def aggregate(
    records: Iterable[QARecord],
    distributions: Mapping[str, AnswerDistribution],
    outcomes: Mapping[str, EvalOutcome],
    config: MetricConfig,
) -> MetricsReport:
    """Assemble the per-bucket and overall report.

    All three collections must be keyed by the same record ids and every
    record must carry a bucket assignment. Records are reduced in sorted
    id order, so the report is identical for any input ordering or degree
    of upstream parallelism.
    """
    by_id: dict[str, QARecord] = {}
    for record in records:
        if record.record_id in by_id:
            raise ValueError(f"duplicate record_id {record.record_id!r}")
        by_id[record.record_id] = record
    if not by_id:
        raise ValueError("no records to aggregate")

    record_ids = set(by_id)
    for name, keys in (("distributions", set(distributions)), ("outcomes", set(outcomes))):
        if keys != record_ids:
            missing = sorted(record_ids - keys)[:5]
            extra = sorted(keys - record_ids)[:5]
            raise ValueError(
                f"{name} keys do not match records (missing {missing}, unexpected {extra})"
            )
    unassigned = sorted(rid for rid, rec in by_id.items() if rec.bucket == UNASSIGNED)
    if unassigned:
        raise ValueError(
            f"{len(unassigned)} records have no bucket (e.g. {unassigned[:5]}); partition first"
        )
    for rid in record_ids:
        if distributions[rid].record_id != rid:
            raise ValueError(f"distribution keyed {rid!r} belongs to {distributions[rid].record_id!r}")
        if outcomes[rid].record_id != rid:
            raise ValueError(f"outcome keyed {rid!r} belongs to {outcomes[rid].record_id!r}")

    ordered_ids = sorted(by_id)
    all_members = []
    members_by_bucket: dict[str, list] = {bucket: [] for bucket in BUCKETS}
    for rid in ordered_ids:
        trio = (by_id[rid], distributions[rid], outcomes[rid])
        all_members.append(trio)
        members_by_bucket[by_id[rid].bucket].append(trio)

    per_bucket = {
        bucket: _bucket_metrics(members, config)
        for bucket, members in members_by_bucket.items()
        if members
    }
    return MetricsReport(
        per_bucket=per_bucket,
        overall=_bucket_metrics(all_members, config),
        config_echo=config,
    )
