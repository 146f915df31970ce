"""Report emission: delimited machine outputs, JSON documents, run manifests.

Machine outputs preserve full float precision and contain no timestamps,
so identical inputs always produce byte-identical files. The run
timestamp lives only in the separate manifest file. Human-readable tables
round to one decimal of percent.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable

from .metrics import BucketMetrics, MetricsReport
from .recall import BatchRecallResult, RecallTrace
from .types import BUCKETS, RESPONSE_CLASSES, MetricConfig

OVERALL = "overall"


def tool_version() -> str:
    from . import __version__

    return __version__


def dataset_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_manifest(
    config: MetricConfig,
    backend_desc: dict[str, Any],
    dataset_path: str | Path | None = None,
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Deterministic run envelope embedded in every report."""
    manifest: dict[str, Any] = {
        "tool": "latent-recall",
        "tool_version": tool_version(),
        "backend": backend_desc,
        "config": config.to_dict(),
    }
    if dataset_path is not None:
        manifest["dataset_path"] = str(dataset_path)
        manifest["dataset_sha256"] = dataset_sha256(dataset_path)
    if extra:
        manifest.update(extra)
    return manifest


def write_json(path: str | Path, payload: dict[str, Any]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_manifest(path: str | Path, manifest: dict[str, Any]) -> None:
    """Write the manifest with the run timestamp; the one file that varies per run."""
    stamped = dict(manifest)
    stamped["timestamp"] = datetime.now(timezone.utc).isoformat()
    write_json(path, stamped)


def _manifest_comment(manifest: dict[str, Any]) -> str:
    return "# manifest: " + json.dumps(manifest, sort_keys=True, ensure_ascii=False)


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _ordered_buckets(report: MetricsReport) -> list[tuple[str, BucketMetrics]]:
    rows = [(b, report.per_bucket[b]) for b in BUCKETS if b in report.per_bucket]
    rows.append((OVERALL, report.overall))
    return rows


def write_metrics_csv(path: str | Path, report: MetricsReport, manifest: dict[str, Any]) -> None:
    """One row per bucket and metric: n_records, accuracy, hits@k, response shares."""
    lines = [_manifest_comment(manifest), "bucket,metric,value"]
    for bucket, metrics in _ordered_buckets(report):
        lines.append(f"{bucket},n_records,{metrics.n_records}")
        lines.append(f"{bucket},accuracy,{_fmt(metrics.accuracy)}")
        for k in sorted(metrics.hits_at):
            lines.append(f"{bucket},hits@{k},{_fmt(metrics.hits_at[k])}")
        for cls in RESPONSE_CLASSES:
            lines.append(f"{bucket},response_{cls},{_fmt(metrics.response_dist[cls])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_rank_cdf_csv(path: str | Path, report: MetricsReport, manifest: dict[str, Any]) -> None:
    """Rank CDF series per bucket, ready for external plotting."""
    lines = [_manifest_comment(manifest), "rank,cumulative_fraction,bucket"]
    for bucket, metrics in _ordered_buckets(report):
        for rank, fraction in metrics.rank_cdf:
            lines.append(f"{rank},{_fmt(fraction)},{bucket}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def recall_table_rows(result: BatchRecallResult) -> list[dict[str, Any]]:
    """Paired before/after accuracy per bucket; delta computed from counts."""
    rows = []
    buckets = [b for b in BUCKETS if b in result.before_report.per_bucket]
    for bucket in buckets + [OVERALL]:
        if bucket == OVERALL:
            before = result.before_report.overall
            after = result.after_report.overall
        else:
            before = result.before_report.per_bucket[bucket]
            after = result.after_report.per_bucket[bucket]
        n = before.n_records
        delta = (after.response_counts["correct"] - before.response_counts["correct"]) / n
        rows.append(
            {
                "bucket": bucket,
                "n_records": n,
                "accuracy_before": before.accuracy,
                "accuracy_after": after.accuracy,
                "delta": delta,
            }
        )
    return rows


def write_recall_csv(path: str | Path, rows: list[dict[str, Any]], manifest: dict[str, Any]) -> None:
    lines = [_manifest_comment(manifest), "bucket,n_records,accuracy_before,accuracy_after,delta"]
    for row in rows:
        lines.append(
            f"{row['bucket']},{row['n_records']},{_fmt(row['accuracy_before'])},"
            f"{_fmt(row['accuracy_after'])},{_fmt(row['delta'])}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trace_jsonl(traces: Iterable[RecallTrace], path: str | Path) -> None:
    ordered = sorted(traces, key=lambda t: t.record_id)
    with Path(path).open("w", encoding="utf-8") as handle:
        for trace in ordered:
            handle.write(json.dumps(trace.to_dict(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def _pct(value: float) -> str:
    return f"{value * 100:.1f}"


def render_metrics_table(report: MetricsReport) -> str:
    """Human-readable table; percentages rounded to one decimal."""
    ks = sorted(report.overall.hits_at)
    header = ["bucket", "n", "accuracy"] + [f"hits@{k}" for k in ks] + ["uninformative"]
    rows = [header]
    for bucket, metrics in _ordered_buckets(report):
        rows.append(
            [bucket, str(metrics.n_records), _pct(metrics.accuracy)]
            + [_pct(metrics.hits_at[k]) for k in ks]
            + [_pct(metrics.response_dist["uninformative"])]
        )
    return _align(rows)


def render_recall_table(rows: list[dict[str, Any]]) -> str:
    table = [["bucket", "n", "acc_before", "acc_after", "delta"]]
    for row in rows:
        table.append(
            [
                row["bucket"],
                str(row["n_records"]),
                _pct(row["accuracy_before"]),
                _pct(row["accuracy_after"]),
                _pct(row["delta"]),
            ]
        )
    return _align(table)


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.rjust(width) for cell, width in zip(row, widths)))
    return "\n".join(lines)
