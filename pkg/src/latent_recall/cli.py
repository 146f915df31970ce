"""Command-line interface: partition, evaluate, recall, mock-serve, dump-convert.

Exit codes: 0 on success, 1 for evaluation-time failures (unreachable
backend, per-record errors), 2 for input or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from .backends import (
    BackendError,
    CapabilityError,
    HttpBackend,
    LMBackend,
    MockBackend,
    load_gap_spec,
    read_logit_dump,
    write_logit_dump,
)
from .dataset import (
    DEFAULT_ALIAS_DELIMITER,
    DatasetError,
    load_dataset,
    partition_by_popularity,
    write_dataset,
)
from .metrics import aggregate, score_record
from .mockserver import MockCompletionServer, serve_until_signal
from .recall import batch_recall
from .report import (
    build_manifest,
    recall_table_rows,
    render_metrics_table,
    render_recall_table,
    write_json,
    write_manifest,
    write_metrics_csv,
    write_rank_cdf_csv,
    write_recall_csv,
    write_trace_jsonl,
)
from .stopwords import load_stopword_file
from .types import UNASSIGNED, MetricConfig, QARecord

logger = logging.getLogger(__name__)


def _parse_k_list(value: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid k list {value!r}") from exc
    if not ks:
        raise argparse.ArgumentTypeError("k list must not be empty")
    return ks


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-recall",
        description=(
            "Measure how much knowledge a language model stores versus expresses "
            "(Hits@k over top-k token candidates) and recover latent answers by "
            "filtering uninformative candidates and re-prompting."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    dataset_args = argparse.ArgumentParser(add_help=False)
    dataset_args.add_argument("dataset", help="QA dataset file (JSONL or CSV)")
    dataset_args.add_argument("--format", choices=("jsonl", "csv"), default=None,
                              help="dataset format (default: inferred from suffix)")
    dataset_args.add_argument("--alias-delimiter", default=DEFAULT_ALIAS_DELIMITER,
                              help="separator for multi-answer cells (default: '||')")

    config_args = argparse.ArgumentParser(add_help=False)
    config_args.add_argument("--k", type=_parse_k_list, default=(1, 5, 50, 100),
                             help="comma-separated k values, e.g. 1,5,50,100")
    config_args.add_argument("--min-match-len", type=int, default=3,
                             help="minimum shared character run for a token hit")
    config_args.add_argument("--stopwords", metavar="FILE", default=None,
                             help="stop-word file overriding the shipped list")
    config_args.add_argument("--head-frac", type=float, default=0.10,
                             help="fraction of entities in the head bucket")
    config_args.add_argument("--torso-frac", type=float, default=0.40,
                             help="fraction of entities in the torso bucket")
    config_args.add_argument("--probe-position", type=int, default=0,
                             help="generated-token position whose candidates are probed")
    config_args.add_argument("--max-tokens", type=int, default=32,
                             help="completion length requested from the backend")

    backend_args = argparse.ArgumentParser(add_help=False)
    backend_args.add_argument("--backend", choices=("http", "dump", "mock"), required=True)
    backend_args.add_argument("--endpoint", help="base URL of an OpenAI-compatible server")
    backend_args.add_argument("--mock-spec", metavar="FILE", help="scripted backend spec (JSON)")
    backend_args.add_argument("--dump", metavar="FILE", help="logit-dump JSONL file")
    backend_args.add_argument("--concurrency", type=int, default=1,
                              help="max in-flight backend requests")
    backend_args.add_argument("--fix-order", action="store_true",
                              help="re-sort out-of-order dump candidates instead of failing")

    p_partition = sub.add_parser(
        "partition", parents=[dataset_args],
        help="assign head/torso/tail buckets by entity popularity",
    )
    p_partition.add_argument("--head-frac", type=float, default=0.10)
    p_partition.add_argument("--torso-frac", type=float, default=0.40)
    p_partition.add_argument("--out", required=True, help="output JSONL path")
    p_partition.set_defaults(func=cmd_partition)

    p_evaluate = sub.add_parser(
        "evaluate", parents=[dataset_args, config_args, backend_args],
        help="compute Hits@k, accuracy, response distribution, and rank CDF",
    )
    p_evaluate.add_argument("--out", required=True, help="output directory")
    p_evaluate.set_defaults(func=cmd_evaluate)

    p_recall = sub.add_parser(
        "recall", parents=[dataset_args, config_args, backend_args],
        help="run answer recovery and report before/after accuracy",
    )
    p_recall.add_argument("--out", required=True, help="output directory")
    p_recall.add_argument("--trace", metavar="FILE", default=None,
                          help="write per-record recovery traces as JSONL")
    p_recall.add_argument("--always-recover", action="store_true",
                          help="re-prompt unconditionally, not only on uninformative answers")
    p_recall.set_defaults(func=cmd_recall)

    p_serve = sub.add_parser(
        "mock-serve", help="serve a scripted backend over the completions protocol",
    )
    p_serve.add_argument("spec", help="scripted backend spec (JSON)")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8900)
    p_serve.add_argument("--probe-position", type=int, default=0)
    p_serve.set_defaults(func=cmd_mock_serve)

    p_dump = sub.add_parser(
        "dump-convert", parents=[dataset_args, config_args, backend_args],
        help="query a backend for every record and write a logit dump",
    )
    p_dump.add_argument("--out", required=True, help="output dump path (JSONL)")
    p_dump.set_defaults(func=cmd_dump_convert)

    return parser


def _config_from_args(args: argparse.Namespace) -> MetricConfig:
    stopword_list = None
    if args.stopwords:
        stopword_list = load_stopword_file(args.stopwords)
    kwargs = dict(
        k_values=args.k,
        min_match_len=args.min_match_len,
        head_fraction=args.head_frac,
        torso_fraction=args.torso_frac,
        probe_position=args.probe_position,
        max_completion_tokens=args.max_tokens,
        always_recover=getattr(args, "always_recover", False),
    )
    if stopword_list is not None:
        kwargs["stopword_list"] = stopword_list
    return MetricConfig(**kwargs)


def _build_backend(args: argparse.Namespace, config: MetricConfig) -> LMBackend:
    if args.backend == "http":
        if not args.endpoint:
            raise DatasetError("--endpoint is required with --backend http")
        return HttpBackend(endpoint=args.endpoint, probe_position=config.probe_position)
    if args.backend == "mock":
        if not args.mock_spec:
            raise DatasetError("--mock-spec FILE is required with --backend mock")
        return MockBackend(load_gap_spec(args.mock_spec), probe_position=config.probe_position)
    raise DatasetError(f"backend {args.backend!r} cannot serve completions here")


def _check_capability(backend: LMBackend, config: MetricConfig) -> None:
    if backend.max_top_logprobs is not None and config.max_k > backend.max_top_logprobs:
        raise CapabilityError(
            f"requested k={config.max_k} but the backend serves at most "
            f"{backend.max_top_logprobs} top logprobs"
        )


def _require_partitioned(records: Sequence[QARecord]) -> None:
    unassigned = [r.record_id for r in records if r.bucket == UNASSIGNED]
    if unassigned:
        raise DatasetError(
            f"{len(unassigned)} records have no bucket (e.g. {unassigned[:5]}); "
            "run `latent-recall partition` first"
        )


def _fetch_distributions(records, backend, config, concurrency):
    distributions = {}
    failures = []

    def fetch(record: QARecord):
        return backend.complete(
            record.prompt,
            top_k=config.max_k,
            max_tokens=config.max_completion_tokens,
            record_id=record.record_id,
        )

    if concurrency == 1:
        for record in records:
            try:
                distributions[record.record_id] = fetch(record)
            except BackendError as exc:
                failures.append((record.record_id, str(exc)))
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            futures = {r.record_id: pool.submit(fetch, r) for r in records}
            for record_id, future in futures.items():
                try:
                    distributions[record_id] = future.result()
                except BackendError as exc:
                    failures.append((record_id, str(exc)))
    return distributions, sorted(failures)


def _print_failures(failures) -> None:
    print(f"{len(failures)} records failed:", file=sys.stderr)
    for record_id, message in failures:
        print(f"  {record_id}: {message}", file=sys.stderr)


def cmd_partition(args: argparse.Namespace) -> int:
    records = load_dataset(args.dataset, fmt=args.format, alias_delimiter=args.alias_delimiter)
    partitioned = partition_by_popularity(records, args.head_frac, args.torso_frac)
    write_dataset(partitioned, args.out)
    counts = Counter(r.bucket for r in partitioned)
    entities = len({r.entity_id for r in partitioned})
    print(
        f"partitioned {len(partitioned)} records over {entities} entities: "
        f"head={counts.get('head', 0)} torso={counts.get('torso', 0)} tail={counts.get('tail', 0)}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    records = load_dataset(args.dataset, fmt=args.format, alias_delimiter=args.alias_delimiter)
    _require_partitioned(records)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.backend == "dump":
        if not args.dump:
            raise DatasetError("--dump FILE is required with --backend dump")
        dump = read_logit_dump(args.dump, fix_order=args.fix_order)
        missing = [r.record_id for r in records if r.record_id not in dump]
        if missing:
            raise DatasetError(
                f"dump is missing {len(missing)} dataset records (e.g. {missing[:5]})"
            )
        shallow = [r.record_id for r in records if dump[r.record_id].k_available < config.max_k]
        if shallow:
            raise DatasetError(
                f"k={config.max_k} exceeds the dumped candidate depth for "
                f"{len(shallow)} records (e.g. {shallow[:5]})"
            )
        distributions = {r.record_id: dump[r.record_id] for r in records}
        failures: list[tuple[str, str]] = []
        backend_desc = {"kind": "dump", "path": str(args.dump)}
    else:
        backend = _build_backend(args, config)
        _check_capability(backend, config)
        distributions, failures = _fetch_distributions(records, backend, config, args.concurrency)
        backend_desc = backend.describe()

    scored = [r for r in records if r.record_id in distributions]
    if not scored:
        _print_failures(failures)
        return 1
    outcomes = {r.record_id: score_record(r, distributions[r.record_id], config) for r in scored}
    report = aggregate(scored, distributions, outcomes, config)

    manifest = build_manifest(config, backend_desc, args.dataset)
    write_json(out_dir / "metrics.json", {"manifest": manifest, **report.to_dict()})
    write_metrics_csv(out_dir / "metrics.csv", report, manifest)
    write_rank_cdf_csv(out_dir / "rank_cdf.csv", report, manifest)
    write_manifest(out_dir / "manifest.json", manifest)
    print(render_metrics_table(report))
    if failures:
        _print_failures(failures)
        return 1
    return 0


def cmd_recall(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    records = load_dataset(args.dataset, fmt=args.format, alias_delimiter=args.alias_delimiter)
    _require_partitioned(records)
    if args.backend == "dump":
        raise DatasetError(
            "recall needs a live backend (http or mock): "
            "the recovery re-prompt cannot be answered from a static dump"
        )
    backend = _build_backend(args, config)
    _check_capability(backend, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = batch_recall(records, backend, config, concurrency=args.concurrency)
    rows = recall_table_rows(result)
    stats = {
        "records_total": len(records),
        "records_scored": result.before_report.overall.n_records,
        "records_failed": len(result.failures),
        "second_queries": result.second_query_count,
    }
    manifest = build_manifest(config, backend.describe(), args.dataset, extra={"stats": stats})
    write_json(
        out_dir / "recall.json",
        {
            "manifest": manifest,
            "table": rows,
            "before": result.before_report.to_dict(),
            "after": result.after_report.to_dict(),
            "failures": [{"record_id": rid, "error": msg} for rid, msg in result.failures],
        },
    )
    write_recall_csv(out_dir / "recall.csv", rows, manifest)
    write_manifest(out_dir / "manifest.json", manifest)
    if args.trace:
        write_trace_jsonl((trace for _, trace in result.results), args.trace)
    print(render_recall_table(rows))
    print(
        f"second queries: {stats['second_queries']} / {stats['records_scored']} scored records"
    )
    if result.failures:
        _print_failures(result.failures)
        return 1
    return 0


def cmd_mock_serve(args: argparse.Namespace) -> int:
    spec = load_gap_spec(args.spec)
    try:
        server = MockCompletionServer(
            spec, host=args.host, port=args.port, probe_position=args.probe_position
        )
    except OSError as exc:
        raise DatasetError(f"cannot bind {args.host}:{args.port}: {exc}") from exc
    print(f"serving scripted completions on {server.endpoint}", flush=True)
    return serve_until_signal(server)


def cmd_dump_convert(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    records = load_dataset(args.dataset, fmt=args.format, alias_delimiter=args.alias_delimiter)
    if args.backend == "dump":
        raise DatasetError("dump-convert queries a live backend; use --backend http or mock")
    backend = _build_backend(args, config)
    _check_capability(backend, config)
    distributions, failures = _fetch_distributions(records, backend, config, args.concurrency)
    write_logit_dump(distributions.values(), args.out)
    print(f"wrote {len(distributions)} distributions to {args.out}")
    if failures:
        _print_failures(failures)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("httpx").setLevel(logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
