"""Dataset ingestion, persistence, and head/torso/tail partitioning."""

from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .types import HEAD, TAIL, TORSO, QARecord, normalize_text

REQUIRED_FIELDS = ("record_id", "question", "prompt", "answers", "entity_id", "popularity")
DEFAULT_ALIAS_DELIMITER = "||"


class DatasetError(Exception):
    """Raised for malformed dataset or dump files; the message carries file:line context."""


def load_dataset(
    path: str | Path,
    fmt: str | None = None,
    alias_delimiter: str = DEFAULT_ALIAS_DELIMITER,
) -> list[QARecord]:
    """Load QA records from a JSONL or CSV file.

    The format is inferred from the file suffix unless given explicitly.
    In JSONL, answers may be a JSON array or a single string joined with
    the alias delimiter; in CSV the answers cell is always delimiter-split.
    Duplicate record ids and malformed rows are rejected with line numbers.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("jsonl", "csv"):
        raise DatasetError(f"unsupported dataset format {fmt!r} (expected jsonl or csv)")

    records: list[QARecord] = []
    seen: dict[str, int] = {}
    if fmt == "jsonl":
        rows = _iter_jsonl_rows(path)
    else:
        rows = _iter_csv_rows(path, alias_delimiter)
    for lineno, data in rows:
        record = _record_from_row(path, lineno, data, alias_delimiter)
        if record.record_id in seen:
            raise DatasetError(
                f"{path}:{lineno}: duplicate record_id {record.record_id!r} "
                f"(first seen on line {seen[record.record_id]})"
            )
        seen[record.record_id] = lineno
        records.append(record)
    if not records:
        raise DatasetError(f"{path}: dataset contains no records")
    return records


def _iter_jsonl_rows(path: Path) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object per line")
            yield lineno, data


def _iter_csv_rows(path: Path, alias_delimiter: str) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DatasetError(f"{path}: empty CSV file")
        for row in reader:
            lineno = reader.line_num
            if None in row:
                raise DatasetError(f"{path}:{lineno}: row has more cells than the header")
            yield lineno, {key: value for key, value in row.items() if value is not None}


def _record_from_row(path: Path, lineno: int, data: dict, alias_delimiter: str) -> QARecord:
    for field_name in REQUIRED_FIELDS:
        if field_name not in data or data[field_name] is None:
            raise DatasetError(f"{path}:{lineno}: missing required field {field_name!r}")
    answers_raw = data["answers"]
    if isinstance(answers_raw, str):
        answers = tuple(answers_raw.split(alias_delimiter))
    elif isinstance(answers_raw, (list, tuple)):
        answers = tuple(str(a) for a in answers_raw)
    else:
        raise DatasetError(f"{path}:{lineno}: answers must be a list or delimiter-joined string")
    try:
        popularity = float(data["popularity"])
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{path}:{lineno}: popularity is not a number: {data['popularity']!r}") from exc
    try:
        record = QARecord(
            record_id=str(data["record_id"]),
            question=str(data["question"]),
            prompt=str(data["prompt"]),
            answers=answers,
            entity_id=str(data["entity_id"]),
            popularity=popularity,
            bucket=data.get("bucket", "unassigned") or "unassigned",
        )
    except ValueError as exc:
        raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    if any(not normalize_text(a) for a in record.answers):
        raise DatasetError(f"{path}:{lineno}: answer alias is empty after normalization")
    return record


def write_dataset(records: Iterable[QARecord], path: str | Path) -> None:
    """Write records as JSONL with a stable key order (deterministic output)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def _ceil_share(fraction: float, total: int) -> int:
    # Fraction(str(...)) keeps 0.1 * 30 style float drift out of the cutoffs.
    return math.ceil(Fraction(str(fraction)) * total)


def partition_by_popularity(
    records: Sequence[QARecord],
    head_fraction: float = 0.10,
    torso_fraction: float = 0.40,
) -> list[QARecord]:
    """Assign every record a head/torso/tail bucket by entity popularity.

    Entities (not records) are ranked by popularity descending with ties
    broken by entity_id ascending; the top ceil(head_fraction * E) entities
    form the head, the next ceil(torso_fraction * E) the torso, and the
    remainder the tail. Records inherit their entity's bucket. When an
    entity appears with several popularity values, the maximum is used.
    """
    if not records:
        raise ValueError("cannot partition an empty dataset")
    if not 0 < head_fraction <= 1:
        raise ValueError("head_fraction must be in (0, 1]")
    if not 0 <= torso_fraction < 1:
        raise ValueError("torso_fraction must be in [0, 1)")
    if head_fraction + torso_fraction > 1:
        raise ValueError("head_fraction + torso_fraction must not exceed 1")

    popularity: dict[str, float] = {}
    for record in records:
        current = popularity.get(record.entity_id)
        if current is None or record.popularity > current:
            popularity[record.entity_id] = record.popularity

    ordered = sorted(popularity, key=lambda eid: (-popularity[eid], eid))
    n_entities = len(ordered)
    n_head = min(_ceil_share(head_fraction, n_entities), n_entities)
    n_torso = min(_ceil_share(torso_fraction, n_entities), n_entities - n_head)
    bucket_of: dict[str, str] = {}
    for i, entity_id in enumerate(ordered):
        if i < n_head:
            bucket_of[entity_id] = HEAD
        elif i < n_head + n_torso:
            bucket_of[entity_id] = TORSO
        else:
            bucket_of[entity_id] = TAIL
    return [record.with_bucket(bucket_of[record.entity_id]) for record in records]
