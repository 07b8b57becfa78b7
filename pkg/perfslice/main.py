#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Entry point for the perfslice command-line tool"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .bench import DEFAULT_FRAME_SIZES, DEFAULT_INGEST_SIZES, DEFAULT_REPEAT, SUITES, bench_table, frame_suite, ingest_suite
from .config import BACKENDS, FORMATS, CliConfig
from .diagnostics import (
    ImbalanceRow,
    Partition,
    SavingsRow,
    balance_ratio,
    call_chain,
    compare_partitions,
    dbscan,
    detect_active_gpu_metrics,
    find_metric_contexts,
    imbalance_report,
    iteration_cv_report,
    kmeans,
    kmeans_stability,
    node_correlate,
    outlier_cluster,
    rank_hostnames,
    rows_to_table,
    savings_report,
)
from .errors import (
    DegenerateSummary,
    InsufficientData,
    InvalidConfig,
    NoIterations,
    NoOutliers,
    NoPeriodicity,
    NoSuchMetric,
    NoSummary,
    ParseError,
    PerfSliceError,
    UndefinedCV,
)
from .frame import Backend, Table, group_aggregate, merge
from .ingest import KeepSet, compute_keep_set, ingest_profiles
from .itermodel import build_tri_model
from .query import Session, parse_query, profile_table, to_frame
from .store import SUMMARY_PROFILE_ID, ContextKind, DbHandle, Scope, open_database, validate_database, write_database
from .synthgen import generate_scenario, load_scenario
from .topology import localize_outliers, render_report

EXIT_CODES: Tuple[Tuple[Any, int], ...] = (
    (InvalidConfig, 2),
    (ParseError, 3),
    (NoSuchMetric, 4),
    ((DegenerateSummary, NoSummary), 5),
    (NoPeriodicity, 6),
    (NoOutliers, 7),
    (PerfSliceError, 1),
)
TRUTH_FILE = "truth.json"


def setup_logging(verbose: bool = False) -> None:
    """Configure logging."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(format="%(levelname)s: %(message)s", level=level)


def exit_code_for(error: BaseException) -> int:
    for types, code in EXIT_CODES:
        if isinstance(error, types):
            return code
    return 255


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def _clean(value: Any) -> Any:
    """Replace NaN by None so the JSON output stays standard."""
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


def emit_json(payload: Any) -> None:
    print(json.dumps(_clean(payload), indent=2, default=_json_default))


def emit_table(cfg: CliConfig, table: Table) -> None:
    if cfg.fmt == "json":
        emit_json(table.to_records())
    else:
        sys.stdout.write(table.to_csv())


def _open(cfg: CliConfig) -> DbHandle:
    if cfg.db is None:
        raise InvalidConfig("No database given (use --db PATH)")
    return open_database(cfg.db)


def _rank_values(h: DbHandle, ctx_ids: Sequence[int], metric_ids: Sequence[int], cfg: CliConfig) -> Dict[int, np.ndarray]:
    """Per-rank totals (all threads, all given metrics) of each context."""
    ranks = h.meta.ranks()
    result = {int(c): np.zeros(len(ranks), dtype=np.float64) for c in ctx_ids}
    if not ranks or not ctx_ids:
        return result
    mask = np.zeros(len(h.meta.cct), dtype=bool)
    mask[np.asarray(ctx_ids, dtype=np.int64)] = True
    slice_table = ingest_profiles(h, h.meta.rank_profile_ids(), KeepSet(mask), metric_ids, cfg.jobs)
    joined = merge(slice_table, profile_table(h.meta), ["profile_id"], backend=cfg.frame_backend)
    totals = group_aggregate(joined, ["ctx_id", "rank"], [("value", "sum")], cfg.frame_backend)
    position = {r: i for i, r in enumerate(ranks)}
    for c, r, v in zip(totals["ctx_id"].tolist(), totals["rank"].tolist(), totals["value_sum"].tolist()):
        result[c][position[r]] = v
    return result


def _summary_metric_slice(h: DbHandle, metric_ids: Sequence[int], cfg: CliConfig) -> Table:
    return ingest_profiles(h, [SUMMARY_PROFILE_ID], None, metric_ids, cfg.jobs)


def _kernel_contexts(h: DbHandle, metric: str, min_share: float, cfg: CliConfig) -> Tuple[List[int], List[Tuple[int, float]]]:
    """Metric ids and (ctx, share) pairs of the GPU kernels worth analysing."""
    meta = h.meta
    if not h.has_profile(SUMMARY_PROFILE_ID):
        raise NoSummary(f"{h.path} has no summary profile")
    if metric == "auto":
        exclusive = [m.metric_id for m in meta.metrics if m.scope is Scope.EXCLUSIVE]
        summary = _summary_metric_slice(h, exclusive, cfg)
        metric_ids = detect_active_gpu_metrics(summary, meta)
    else:
        desc = meta.find_metric(metric, Scope.EXCLUSIVE)
        if desc is None:
            raise NoSuchMetric(f"No exclusive metric named {metric!r}")
        metric_ids = [desc.metric_id]
        summary = _summary_metric_slice(h, metric_ids, cfg)
    return metric_ids, find_metric_contexts(summary, metric_ids, meta.cct, min_share)


def _resolve_anchor(h: DbHandle, anchor: str) -> Any:
    if anchor == "auto":
        return "auto"
    if anchor == "root":
        return h.meta.cct.root_id
    if anchor.isdigit():
        return int(anchor)
    matches = h.meta.cct.find(anchor)
    if len(matches) != 1:
        raise InvalidConfig(f"Anchor {anchor!r} matches {len(matches)} contexts")
    return matches[0]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace, cfg: CliConfig) -> int:
    scenario = load_scenario(args.scenario)
    if cfg.seed is not None:
        scenario.seed = cfg.seed
    out = Path(args.out) if args.out else cfg.db
    if out is None:
        raise InvalidConfig("No output directory given (use --out or --db)")
    image, truth = generate_scenario(scenario)
    write_database(image, out)
    with open(out / TRUTH_FILE, "w", encoding="utf-8") as f:
        json.dump(truth.to_dict(), f, indent=2, default=_json_default)
    logging.info(f"Wrote {len(image.meta.profiles)} profiles and {len(image.traces)} traces to {out}")
    return 0


def cmd_info(args: argparse.Namespace, cfg: CliConfig) -> int:
    with _open(cfg) as h:
        meta = h.meta
        info = {
            "path": str(h.path),
            "profiles": h.n_profiles,
            "ranks": len(meta.ranks()),
            "has_summary": meta.has_summary,
            "traces": len(h.trace_ids),
            "contexts": len(meta.cct),
            "max_depth": len(meta.cct.levels) - 1,
            "metrics": [f"{m.name} ({m.scope.short})" for m in meta.metrics],
            "hosts": len({p.hostname for p in meta.profiles if p.profile_id != SUMMARY_PROFILE_ID}),
        }
    if cfg.fmt == "json":
        emit_json(info)
    else:
        for key, value in info.items():
            if isinstance(value, list):
                value = ";".join(value)
            print(f"{key},{value}")
    return 0


def cmd_validate(args: argparse.Namespace, cfg: CliConfig) -> int:
    with _open(cfg) as h:
        report = validate_database(h)
    if cfg.fmt == "json":
        emit_json(report.to_dict())
    else:
        for v in report.violations:
            print(v)
    if not report.ok:
        logging.error(f"{len(report)} violation(s) found in {cfg.db}")
        return 1
    logging.info(f"{cfg.db} is valid")
    return 0


def cmd_query(args: argparse.Namespace, cfg: CliConfig) -> int:
    q = parse_query(args.exec_expr, args.ctx_expr, args.metric_expr, args.window)
    with _open(cfg) as h:
        keep = compute_keep_set(h, h.meta, cfg.strategies())
        session = Session(h, keep, cfg.jobs)
        if args.traces:
            table, _ = session.fetch_traces(q)
        else:
            table = to_frame(session, q)
    emit_table(cfg, table)
    return 0


def cmd_imbalance(args: argparse.Namespace, cfg: CliConfig) -> int:
    with _open(cfg) as h:
        metric_ids, contexts = _kernel_contexts(h, args.metric, args.min_share, cfg)
        if not contexts:
            logging.warning("No GPU kernel above the share threshold")
        ctx_ids = [c for c, _ in contexts]
        per_rank = _rank_values(h, ctx_ids, metric_ids, cfg)
        model = None
        if ctx_ids and h.trace_ids:
            try:
                model = build_tri_model(h, h.trace_ids, _resolve_anchor(h, args.anchor), ctx_ids, cfg.jobs)
            except (NoPeriodicity, NoIterations) as e:
                logging.warning(f"No iteration model, CV columns from rank totals: {e}")
        rows = imbalance_report(contexts, per_rank, h.meta.cct, model)
    emit_table(cfg, rows_to_table(rows, ImbalanceRow))
    return 0


def _tracked_contexts(h: DbHandle, cfg: CliConfig) -> List[int]:
    try:
        _, contexts = _kernel_contexts(h, "auto", 0.0, cfg)
    except (NoSummary, DegenerateSummary):
        contexts = []
    if contexts:
        return sorted(c for c, _ in contexts)
    kernels = np.flatnonzero(h.meta.cct.kinds == int(ContextKind.GPU_KERNEL)).tolist()
    return kernels or list(range(len(h.meta.cct)))


def cmd_iters(args: argparse.Namespace, cfg: CliConfig) -> int:
    with _open(cfg) as h:
        if not h.trace_ids:
            raise NoIterations(f"{h.path} has no traces")
        ctx_ids = _tracked_contexts(h, cfg)
        model = build_tri_model(h, h.trace_ids, _resolve_anchor(h, args.anchor), ctx_ids, cfg.jobs)
        total_time = args.total_time
        if total_time is None:
            total_time = max((b - a) for a, b in (h.trace_bounds(p) for p in model.trace_ids)) / 1e9
        names = h.meta.cct.names

    if args.model_csv:
        Path(args.model_csv).write_text(model.to_csv(), encoding="utf-8")
        logging.info(f"Wrote model ({model.n_traces} traces x {model.n_iterations} iterations) to {args.model_csv}")

    cv_rows = []
    for ctx in ctx_ids:
        try:
            across, within = iteration_cv_report(model, ctx)
        except (InsufficientData, UndefinedCV) as e:
            logging.debug(f"No CV for {names[ctx]}: {e}")
            across = within = None
        cv_rows.append({"ctx_id": ctx, "name": names[ctx], "across_rank_cv_pct": across, "within_rank_cv_pct": within})
    savings = savings_report(model, ctx_ids, total_time)

    if cfg.fmt == "json":
        emit_json(
            {
                "anchor_ctx": model.anchor_ctx,
                "anchor": names[model.anchor_ctx],
                "iteration_counts": {str(k): v for k, v in model.iteration_counts().items()},
                "skipped_traces": model.skipped,
                "cv": cv_rows,
                "savings": savings.to_dict(),
            }
        )
    else:
        sys.stdout.write(rows_to_table(savings.rows, SavingsRow).to_csv())
        print()
        print("total_savings_s,total_time_s,speedup_frac")
        print(f"{savings.total_savings_s!r},{savings.total_time_s!r},{savings.speedup_frac!r}")
    logging.info(
        f"{model.n_iterations} iterations, estimated reduction {savings.total_savings_s:.3f} s "
        f"({100 * savings.speedup_frac:.2f}% of {savings.total_time_s:.3f} s)"
    )
    return 0


def _cluster(values: np.ndarray, method: str, k: int, eps: Optional[float]) -> Partition:
    if method == "kmeans":
        return kmeans(values, k)
    return dbscan(values, eps)


def _congestion_groups(node_values: np.ndarray, method: str, k: int, eps: Optional[float]) -> Partition:
    if len(node_values) == 0 or float(np.ptp(node_values)) == 0:
        raise NoOutliers("All nodes behave identically")
    partition = _cluster(node_values, method, k, eps)
    if len(partition.clusters) < 2:
        raise NoOutliers(f"{method} found a single group")
    return partition


def cmd_congestion(args: argparse.Namespace, cfg: CliConfig) -> int:
    metric = args.metric
    with _open(cfg) as h:
        meta = h.meta
        keep = compute_keep_set(h, meta, cfg.strategies())
        session = Session(h, keep, cfg.jobs)

        bottlenecks = to_frame(session, parse_query("summary", f"function({args.callsite})", f"{metric}:sum (e)"))
        order = np.argsort(-bottlenecks["value"], kind="stable")
        bottleneck_rows = [
            {"ctx_id": int(c), "name": meta.cct.names[int(c)], "value": float(v)}
            for c, v in zip(bottlenecks["ctx_id"][order], bottlenecks["value"][order])
        ]

        per_rank_q = parse_query("rank", f"function({args.callsite})", f"{metric}:sum (e)")
        plan = session.resolve(per_rank_q)
        if not plan.ctx_ids:
            raise NoOutliers(f"No call site matches {args.callsite!r}")
        ranks = meta.ranks()
        position = {r: i for i, r in enumerate(ranks)}
        per_rank = {c: np.zeros(len(ranks), dtype=np.float64) for c in plan.ctx_ids}
        sums = group_aggregate(to_frame(session, per_rank_q), ["ctx_id", "rank"], [("value", "sum")], cfg.frame_backend)
        for c, r, v in zip(sums["ctx_id"].tolist(), sums["rank"].tolist(), sums["value_sum"].tolist()):
            per_rank[c][position[r]] = v
        ratios = {c: balance_ratio(v) for c, v in per_rank.items()}
        worst = min(ratios, key=lambda c: (ratios[c], c))
        logging.info(f"Worst call site {meta.cct.names[worst]} (ctx {worst}), balance ratio {ratios[worst]:.3f}")

        root_metric = meta.find_metric(metric, Scope.INCLUSIVE)
        if root_metric is None:
            raise NoSuchMetric(f"No inclusive metric named {metric!r}")
        totals = _rank_values(h, [meta.cct.root_id], [root_metric.metric_id], cfg)[meta.cct.root_id]

    def by_node(values: np.ndarray) -> Table:
        return node_correlate(Table.from_columns({"rank": np.array(ranks, dtype=np.int64), "value": values}), meta)

    nodes = by_node(per_rank[worst])
    node_values = nodes["value_mean"]
    partition = _congestion_groups(node_values, args.cluster, args.k, args.eps)
    total_nodes = by_node(totals)
    total_partition = _congestion_groups(total_nodes["value_mean"], args.cluster, args.k, args.eps)
    comparison = compare_partitions(partition, total_partition)

    outlier_label = outlier_cluster(partition, node_values)
    hostnames = nodes["hostname"].tolist()
    outliers = [hostnames[i] for i in partition.members(outlier_label)]
    report = localize_outliers(outliers, hostnames)

    rank_hosts = rank_hostnames(meta, ranks)
    node_label = dict(zip(hostnames, partition.labels.tolist()))
    rank_labels = [node_label[host] for host in rank_hosts]
    stability = kmeans_stability(per_rank[worst], rank_hosts, rank_labels)

    chain = call_chain(meta.cct, worst)
    if cfg.fmt == "json":
        emit_json(
            {
                "bottlenecks": bottleneck_rows,
                "balance_ratios": [
                    {"ctx_id": c, "name": meta.cct.names[c], "balance_ratio": r} for c, r in sorted(ratios.items())
                ],
                "worst_callsite": {"ctx_id": worst, "call_chain": chain},
                "nodes": nodes.to_records(),
                "clusters": {str(c): n for c, n in partition.sizes().items()},
                "noise": partition.n_noise,
                "outlier_cluster": outlier_label,
                "partition_comparison": comparison.to_dict(),
                "kmeans_stability": [{"k": k, "node_intersections": n} for k, n in stability],
                "topology": report.to_dict(),
            }
        )
    else:
        print("ctx_id,name,balance_ratio")
        for c, r in sorted(ratios.items()):
            print(f"{c},{meta.cct.names[c]},{r!r}")
        print()
        print("call chain: " + " -> ".join(chain))
        print(f"clusters: {partition.sizes()} noise: {partition.n_noise} off-block: {comparison.off_block}")
        print("k,node_intersections")
        for k, n in stability:
            print(f"{k},{n}")
        print()
        sys.stdout.write(render_report(report, "text").decode("utf-8"))
    return 0


def cmd_bench(args: argparse.Namespace, cfg: CliConfig) -> int:
    if args.suite == "ingest":
        sizes = args.sizes or list(DEFAULT_INGEST_SIZES)
        parallelisms = sorted({1, cfg.jobs})
        with _open(cfg) as h:
            rows = ingest_suite(h, sizes, parallelisms, args.repeat)
    else:
        sizes = args.sizes or list(DEFAULT_FRAME_SIZES)
        backends = [Backend.sequential()]
        if cfg.jobs > 1:
            backends.append(Backend.parallel(cfg.jobs))
        rows = frame_suite(sizes, backends, args.repeat, cfg.seed or 0)
    emit_table(cfg, bench_table(rows))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _sizes(text: str) -> List[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid size list: {text!r}")
    if not sizes or any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError(f"Sizes must be positive integers: {text!r}")
    return sizes


def _global_options() -> argparse.ArgumentParser:
    """Options accepted both before and after the command name."""
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--db", help="Database directory")
    common.add_argument("--jobs", "-j", type=int, help="Worker count (default: hardware concurrency, or $PERFSLICE_JOBS)")
    common.add_argument("--backend", choices=BACKENDS, help="Frame backend (default: par)")
    common.add_argument("--format", choices=FORMATS, help="Output format (default: csv)")
    common.add_argument("--prune-share", type=float, dest="prune_share", help="Minimum inclusive share of kept contexts (default: 0.01)")
    common.add_argument("--drop-lines", action="store_true", dest="drop_lines", help="Drop line-level contexts")
    common.add_argument("--collapse", action="append", help="Collapse subtrees below call paths matching GLOB (repeatable)")
    common.add_argument("--prune-file", dest="prune_file", help="File of collapse patterns, one per line")
    common.add_argument("--seed", type=int, help="Seed override for generated scenarios")
    common.add_argument("--config", help="YAML file with default settings")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose output")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(
        prog="perfslice",
        description="Slice, model and diagnose sparse performance databases",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", parents=[common], help="Generate a synthetic database")
    gen.add_argument("scenario", help="Scenario file (YAML or JSON)")
    gen.add_argument("--out", "-o", default=None, help="Output directory (default: --db)")
    gen.set_defaults(func=cmd_gen)

    info = commands.add_parser("info", parents=[common], help="Describe a database")
    info.set_defaults(func=cmd_info)

    validate = commands.add_parser("validate", parents=[common], help="Check every stored invariant")
    validate.set_defaults(func=cmd_validate)

    query = commands.add_parser("query", parents=[common], help="Run a slice query")
    query.add_argument("exec_expr", metavar="EXEC", help="summary | rank | rank(lo-hi[:stride]) | rank(a,b,...)")
    query.add_argument("ctx_expr", metavar="CTX", help="* | function(GLOB) | path(GLOB->GLOB...)")
    query.add_argument("metric_expr", metavar="METRIC", help="NAME:sum|prop (i|e)")
    query.add_argument("--window", default=None, help="Time window T0:T1 in nanoseconds")
    query.add_argument("--traces", action="store_true", help="Print trace events of the window instead")
    query.set_defaults(func=cmd_query)

    imbalance = commands.add_parser("imbalance", parents=[common], help="GPU kernel imbalance report")
    imbalance.add_argument("--metric", default="auto", help="Exclusive metric name, or auto (active GPU metrics)")
    imbalance.add_argument("--min-share", type=float, default=0.001, dest="min_share", help="Minimum kernel share (default: 0.001)")
    imbalance.add_argument("--anchor", default="auto", help="Iteration anchor: auto, root, ctx id or name")
    imbalance.set_defaults(func=cmd_imbalance)

    iters = commands.add_parser("iters", parents=[common], help="Iteration model, CV and savings")
    iters.add_argument("--anchor", default="auto", help="Iteration anchor: auto, root, ctx id or name")
    iters.add_argument("--total-time", type=float, default=None, dest="total_time", help="Run time in seconds (default: longest trace)")
    iters.add_argument("--model-csv", default=None, dest="model_csv", help="Write the model as CSV to this path")
    iters.set_defaults(func=cmd_iters)

    congestion = commands.add_parser("congestion", parents=[common], help="Topology-aware congestion diagnosis")
    congestion.add_argument("--callsite", default="MPI_*", help="Call-site glob (default: MPI_*)")
    congestion.add_argument("--metric", default="cputime", help="Time metric (default: cputime)")
    congestion.add_argument("--cluster", choices=("dbscan", "kmeans"), default="dbscan")
    congestion.add_argument("--k", type=int, default=2, help="K-Means cluster count (default: 2)")
    congestion.add_argument("--eps", type=float, default=None, help="DBSCAN radius (default: 5%% of the value range)")
    congestion.set_defaults(func=cmd_congestion)

    bench = commands.add_parser("bench", parents=[common], help="Timing suites")
    bench.add_argument("--suite", choices=SUITES, default="ingest")
    bench.add_argument("--sizes", type=_sizes, default=None, help="Comma-separated sizes")
    bench.add_argument("--repeat", type=int, default=DEFAULT_REPEAT, help=f"Repetitions (default: {DEFAULT_REPEAT})")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point for perfslice.

    :param argv: Command line arguments
    :return: Exit code (0 for success)
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = bool(getattr(args, "verbose", False))
    setup_logging(verbose)

    try:
        cfg = CliConfig.from_args(args)
        return args.func(args, cfg)
    except PerfSliceError as e:
        logging.error(str(e))
        return exit_code_for(e)
    except Exception as e:
        logging.error(f"Unexpected error: {e}")
        if verbose:
            import traceback

            traceback.print_exc()
        return 255


if __name__ == "__main__":
    sys.exit(main())
