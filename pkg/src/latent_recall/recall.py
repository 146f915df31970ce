"""Answer-recovery decoding: skip uninformative candidates and re-prompt.

When the greedy answer is uninformative, the rank-ordered candidate list
is walked from the top, deleting uninformative tokens; the first
informative candidate (equivalently the highest-probability survivor of
the filter) is appended verbatim to the original prompt and the backend
is queried once more for a fresh greedy completion.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

from .backends import BackendError, LMBackend
from .filtering import RESPONSE_UNINFORMATIVE, FilterVerdict, classify_response, is_uninformative_token
from .metrics import MetricsReport, aggregate, classify_answer, score_record
from .types import (
    UNASSIGNED,
    AnswerDistribution,
    EvalOutcome,
    MetricConfig,
    QARecord,
    TokenCandidate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecallTrace:
    """Audit trail of one recovery attempt."""

    record_id: str
    skipped: tuple[tuple[TokenCandidate, FilterVerdict], ...]
    selected: TokenCandidate | None
    new_prompt: str
    new_completion: str | None
    fallback_used: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "skipped": [
                {**cand.to_dict(), "reason": verdict.reason} for cand, verdict in self.skipped
            ],
            "selected": self.selected.to_dict() if self.selected else None,
            "new_prompt": self.new_prompt,
            "new_completion": self.new_completion,
            "fallback_used": self.fallback_used,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RecallTrace":
        selected = None
        if data["selected"] is not None:
            entry = data["selected"]
            selected = TokenCandidate(entry["token"], entry["logprob"], entry["rank"])
        return cls(
            record_id=data["record_id"],
            skipped=tuple(
                (
                    TokenCandidate(entry["token"], entry["logprob"], entry["rank"]),
                    FilterVerdict(True, entry["reason"]),
                )
                for entry in data["skipped"]
            ),
            selected=selected,
            new_prompt=data["new_prompt"],
            new_completion=data["new_completion"],
            fallback_used=data["fallback_used"],
        )


def select_recovery_token(
    dist: AnswerDistribution, config: MetricConfig
) -> tuple[TokenCandidate | None, list[tuple[TokenCandidate, FilterVerdict]]]:
    """Walk candidates in rank order, skipping uninformative tokens.

    Returns the first informative candidate plus the skipped prefix.
    Because candidates are probability-sorted, the result is exactly the
    highest-probability token among those surviving the filter. Returns
    None (with everything skipped) when no candidate is informative.
    """
    if not dist.candidates:
        raise ValueError(f"record {dist.record_id!r}: candidate list is empty")
    skipped: list[tuple[TokenCandidate, FilterVerdict]] = []
    for candidate in dist.candidates:
        verdict = is_uninformative_token(candidate.token_text, config)
        if verdict.uninformative:
            skipped.append((candidate, verdict))
        else:
            return candidate, skipped
    return None, skipped


@dataclass(frozen=True)
class RecordDecode:
    """Full per-record result of one recovery pass, including the baseline."""

    record: QARecord
    dist: AnswerDistribution
    before: EvalOutcome
    after: EvalOutcome
    trace: RecallTrace
    second_query: bool


def _decode_record(record: QARecord, backend: LMBackend, config: MetricConfig) -> RecordDecode:
    try:
        dist = backend.complete(
            record.prompt,
            top_k=config.max_k,
            max_tokens=config.max_completion_tokens,
            record_id=record.record_id,
        )
    except BackendError as exc:
        raise BackendError(f"record {record.record_id!r}: {exc}") from exc
    if not dist.candidates:
        raise BackendError(f"record {record.record_id!r}: backend returned zero candidates")

    before = score_record(record, dist, config)
    greedy_uninformative = (
        classify_response(dist.greedy_completion, config) == RESPONSE_UNINFORMATIVE
    )
    if not greedy_uninformative and not config.always_recover:
        trace = RecallTrace(
            record_id=record.record_id,
            skipped=(),
            selected=None,
            new_prompt=record.prompt,
            new_completion=None,
            fallback_used=False,
        )
        return RecordDecode(record, dist, before, before, trace, second_query=False)

    selected, skipped = select_recovery_token(dist, config)
    if selected is None:
        trace = RecallTrace(
            record_id=record.record_id,
            skipped=tuple(skipped),
            selected=None,
            new_prompt=record.prompt,
            new_completion=None,
            fallback_used=True,
        )
        return RecordDecode(record, dist, before, before, trace, second_query=False)

    new_prompt = record.prompt + selected.token_text
    try:
        second = backend.complete(
            new_prompt,
            top_k=1,
            max_tokens=config.max_completion_tokens,
            record_id=record.record_id,
        )
    except BackendError as exc:
        raise BackendError(f"record {record.record_id!r}: re-prompt failed: {exc}") from exc
    final_answer = selected.token_text + second.greedy_completion
    after = EvalOutcome(
        record_id=record.record_id,
        response_class=classify_answer(final_answer, record, config),
        hit_rank=before.hit_rank,
        final_answer=final_answer,
    )
    trace = RecallTrace(
        record_id=record.record_id,
        skipped=tuple(skipped),
        selected=selected,
        new_prompt=new_prompt,
        new_completion=second.greedy_completion,
        fallback_used=False,
    )
    return RecordDecode(record, dist, before, after, trace, second_query=True)


def recall_decode(
    record: QARecord, backend: LMBackend, config: MetricConfig
) -> tuple[EvalOutcome, RecallTrace]:
    """Recover one record's answer; at most two backend calls.

    Greedy completions already classified informative are returned
    unchanged without a second query. When every candidate is filtered
    out, the original completion is kept and fallback_used is set.
    """
    decode = _decode_record(record, backend, config)
    return decode.after, decode.trace


@dataclass(frozen=True)
class BatchRecallResult:
    """Recovery over a dataset: per-record results plus paired reports."""

    results: tuple[tuple[EvalOutcome, RecallTrace], ...]
    before_report: MetricsReport
    after_report: MetricsReport
    failures: tuple[tuple[str, str], ...]
    second_query_count: int


def batch_recall(
    records: Sequence[QARecord],
    backend: LMBackend,
    config: MetricConfig,
    concurrency: int = 1,
) -> BatchRecallResult:
    """Run recovery over every record, producing before/after reports.

    Records decode independently (up to `concurrency` in flight); results
    are reduced in record_id order so the output is identical for any
    degree of parallelism. Per-record backend failures do not abort the
    batch: failed records are listed and excluded from both reports.
    """
    if not records:
        raise ValueError("no records to decode")
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    unassigned = sorted(r.record_id for r in records if r.bucket == UNASSIGNED)
    if unassigned:
        raise ValueError(
            f"{len(unassigned)} records have no bucket (e.g. {unassigned[:5]}); partition first"
        )

    decodes: dict[str, RecordDecode] = {}
    failures: dict[str, str] = {}

    def run(record: QARecord) -> RecordDecode:
        return _decode_record(record, backend, config)

    if concurrency == 1:
        for record in records:
            try:
                decodes[record.record_id] = run(record)
            except BackendError as exc:
                failures[record.record_id] = str(exc)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            futures = {record.record_id: pool.submit(run, record) for record in records}
            for record_id, future in futures.items():
                try:
                    decodes[record_id] = future.result()
                except BackendError as exc:
                    failures[record_id] = str(exc)

    if failures:
        logger.warning("%d of %d records failed to decode", len(failures), len(records))
    if not decodes:
        raise BackendError(
            f"all {len(records)} records failed; first error: {next(iter(failures.values()))}"
        )

    ordered_ids = sorted(decodes)
    succeeded = [decodes[rid].record for rid in ordered_ids]
    dists = {rid: decodes[rid].dist for rid in ordered_ids}
    before = {rid: decodes[rid].before for rid in ordered_ids}
    after = {rid: decodes[rid].after for rid in ordered_ids}
    return BatchRecallResult(
        results=tuple((decodes[rid].after, decodes[rid].trace) for rid in ordered_ids),
        before_report=aggregate(succeeded, dists, before, config),
        after_report=aggregate(succeeded, dists, after, config),
        failures=tuple(sorted(failures.items())),
        second_query_count=sum(1 for rid in ordered_ids if decodes[rid].second_query),
    )
