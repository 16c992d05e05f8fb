"""Command-line surface: build, groundtruth, query, bench, verify, view-demo.

Configuration comes from flags, optionally seeded by a JSON config file
(flags win). The bench command prints a human table to stdout and, when
asked, appends line-delimited JSON records suitable for plotting. Exit
codes: 0 success, 2 usage, 3 format, 4 integrity, 5 storage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .cluster import KMeansParams, hcluster
from .core import Metric, VectorSet, brute_force_knn, distance_one_to_many, recall_at
from .edges import EdgeParams, build_skip_edges
from .errors import BPlusAnnError, UsageError
from .search import SearchParams, search, search_batch
from .storage import load_tree, locality_report, open_index, serialize
from .texmex import ingest, read_ivecs, write_ivecs
from .tree import BuildParams, build_tree, verify_tree
from .views import OracleRecallPolicy, RadiusPolicy, serve_stream

DEFAULTS = {
    "metric": "euclidean",
    "tau": 2048,
    "kmeans_k": 10,
    "kmeans_iters": 25,
    "kappa_leaf": 2048,
    "kappa_inner": 1024,
    "d_edge": 128,
    "s_leaf": 512,
    "beta": 32,
    "page_size": 4096,
    "seed": 0,
    "threads": 10,
}


def _env_threads() -> int:
    env = os.environ.get("BPLUSANN_THREADS")
    return int(env) if env else DEFAULTS["threads"]


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; explicit flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bplusann", description="disk-based approximate nearest neighbor index"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="cluster, build the tree (+ skip edges), write the index")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="fvecs/bvecs input")
    p.add_argument("--out", required=True, help="index file to write")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default=DEFAULTS["metric"])
    p.add_argument("--tau", type=int, default=DEFAULTS["tau"], help="cluster split threshold")
    p.add_argument("--kmeans-k", type=int, default=DEFAULTS["kmeans_k"], help="clusters per split")
    p.add_argument("--kmeans-iters", type=int, default=DEFAULTS["kmeans_iters"])
    p.add_argument("--kappa-leaf", type=int, default=DEFAULTS["kappa_leaf"])
    p.add_argument("--kappa-inner", type=int, default=DEFAULTS["kappa_inner"])
    p.add_argument("--d-edge", type=int, default=DEFAULTS["d_edge"])
    p.add_argument("--s-leaf", type=int, default=DEFAULTS["s_leaf"])
    p.add_argument("--no-edges", action="store_true", help="skip the skip-edge graph")
    p.add_argument("--page-size", type=int, default=DEFAULTS["page_size"])
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"])

    p = sub.add_parser("groundtruth", help="write exact k-NN ids as ivecs")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--metric", choices=["euclidean", "cosine"], default=DEFAULTS["metric"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("query", help="run one ad-hoc query against an index")
    _add_common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", help="fvecs file to take the query from")
    p.add_argument("--row", type=int, default=0, help="row of --queries to use")
    p.add_argument("--vector", help="inline comma-separated query vector")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--beta", type=int, default=DEFAULTS["beta"])
    p.add_argument("--d-edge", type=int, default=None)
    p.add_argument("--dissimilar", action="store_true")
    p.add_argument("--cache-cap", type=int, default=None, help="cache cap in bytes")

    p = sub.add_parser("bench", help="recall/QPS sweep over beta and batch size")
    _add_common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--groundtruth", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--betas", default="5,10,20,40,80,100", help="comma-separated beta sweep")
    p.add_argument("--batches", default="1", help="comma-separated batch-size sweep")
    p.add_argument("--d-edge", type=int, default=None, help="0 disables greedy refinement")
    p.add_argument("--threads", type=int, default=_env_threads())
    p.add_argument("--cache-cap", type=int, default=None)
    p.add_argument("--warmup", type=int, default=64)
    p.add_argument("--temporal-sort", action="store_true",
                   help="order queries by a greedy nearest-unused-neighbor chain")
    p.add_argument("--views", action="store_true", help="serve via views, log survival")
    p.add_argument("--k-view", type=int, default=100)
    p.add_argument("--dataset", help="dataset file (oracle exhaustion policy in --views)")
    p.add_argument("--records", help="write line-delimited JSON records here")

    p = sub.add_parser("verify", help="check tree and storage invariants")
    _add_common(p)
    p.add_argument("--index", required=True)

    p = sub.add_parser("view-demo", help="serve a query stream through views, log survival")
    _add_common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--dataset", help="dataset file for the oracle policy")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--k-view", type=int, default=100)
    p.add_argument("--beta", type=int, default=DEFAULTS["beta"])
    p.add_argument("--policy", choices=["oracle", "radius"], default="radius")
    p.add_argument("--records", help="write survival records here")
    return parser


def _apply_config(parser, argv):
    """Pre-scan for --config and fold the file in as parser defaults so that
    explicit flags keep the last word."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        with open(known.config) as fh:
            loaded = json.load(fh)
        for sub_action in parser._subparsers._group_actions:
            for sub in sub_action.choices.values():
                valid = {a.dest for a in sub._actions}
                sub.set_defaults(**{k: v for k, v in loaded.items() if k in valid})
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_build(args) -> int:
    vset = ingest(args.dataset)
    if vset.count == 0:
        raise UsageError(f"{args.dataset} holds no vectors; nothing to build")
    metric = Metric.parse(args.metric)
    km = KMeansParams(K=args.kmeans_k, J=args.kmeans_iters, seed=args.seed)

    t0 = time.perf_counter()
    hierarchy = hcluster(vset, args.tau, km, metric)
    tree = build_tree(
        hierarchy,
        vset,
        BuildParams(
            kappa_leaf=args.kappa_leaf,
            kappa_inner=args.kappa_inner,
            metric=metric,
            seed=args.seed,
        ),
    )
    t_tree = time.perf_counter() - t0

    graph = None
    t_edges = 0.0
    if not args.no_edges:
        t1 = time.perf_counter()
        graph = build_skip_edges(tree, EdgeParams(d_edge=args.d_edge, s_leaf=args.s_leaf))
        t_edges = time.perf_counter() - t1

    pf = serialize(tree, graph, args.out, page_size=args.page_size)
    total = t_tree + t_edges
    print(f"indexed {vset.count} vectors (dim {vset.dim}, {args.metric})")
    print(f"  nodes: {pf.node_count} ({len(tree.leaf_ids())} leaves, height {tree.height})")
    print(f"  tree build : {t_tree:8.2f}s ({100 * t_tree / total:5.1f}%)")
    print(f"  edge build : {t_edges:8.2f}s ({100 * t_edges / total:5.1f}%)")
    print(f"  wrote {args.out} ({os.path.getsize(args.out)} bytes)")
    return 0


def cmd_groundtruth(args) -> int:
    vset = ingest(args.dataset)
    queries = ingest(args.queries)
    if args.k > vset.count:
        raise UsageError(f"k={args.k} exceeds dataset size {vset.count}")
    if queries.count and queries.dim != vset.dim:
        raise UsageError(f"query dim {queries.dim} != dataset dim {vset.dim}")
    metric = Metric.parse(args.metric)
    rows = np.empty((queries.count, args.k), dtype=np.int32)
    for i in range(queries.count):
        rows[i] = [n.id for n in brute_force_knn(vset, queries.data[i], args.k, metric)]
    write_ivecs(args.out, rows)
    print(f"wrote {queries.count} x {args.k} ground-truth rows to {args.out}")
    return 0


def cmd_query(args) -> int:
    with open_index(args.index, args.cache_cap) as tree:
        if args.vector:
            q = np.asarray([float(x) for x in args.vector.split(",")], dtype=np.float32)
        elif args.queries:
            q = ingest(args.queries).data[args.row]
        else:
            raise UsageError("pass --vector or --queries/--row")
        d_edge = args.d_edge
        if d_edge is None:
            d_edge = DEFAULTS["d_edge"] if tree.edges is not None else 0
        params = SearchParams(
            k=args.k, beta=args.beta, d_edge=d_edge, dissimilar=args.dissimilar
        )
        results, stats = search(tree, q, params)
        for rank, n in enumerate(results):
            print(f"{rank:4d}  id={n.id:<12d} distance={n.distance:.6f}")
        print(
            f"# nodes_visited={stats.nodes_visited} hops={stats.hops} "
            f"distance_evals={stats.distance_evals} disk_reads={stats.disk_reads} "
            f"cache_hits={stats.cache_hits}"
        )
    return 0


def temporal_sort(queries: np.ndarray, metric: Metric) -> np.ndarray:
    """Greedy nearest-unused-neighbor chain starting from query 0 (exact,
    quadratic; meant for desk-scale query sets)."""
    n = len(queries)
    order = np.empty(n, dtype=np.int64)
    used = np.zeros(n, dtype=bool)
    order[0] = 0
    used[0] = True
    current = 0
    for i in range(1, n):
        d = distance_one_to_many(queries[current], queries, metric).astype(np.float64)
        d[used] = np.inf
        nxt = int(np.lexsort((np.arange(n), d))[0])
        order[i] = nxt
        used[nxt] = True
        current = nxt
    return order


def _emit_records(path, records):
    if not path:
        return
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def cmd_bench(args) -> int:
    queries_set = ingest(args.queries)
    truth = read_ivecs(args.groundtruth)
    if truth.shape[0] != queries_set.count:
        raise UsageError("ground truth row count does not match query count")
    if truth.shape[1] < args.k:
        raise UsageError(f"ground truth width {truth.shape[1]} < k={args.k}")

    with open_index(args.index, args.cache_cap) as tree:
        if queries_set.dim != tree.dim:
            raise UsageError(f"query dim {queries_set.dim} != index dim {tree.dim}")
        queries = np.ascontiguousarray(queries_set.data, dtype=np.float32)
        if args.temporal_sort:
            order = temporal_sort(queries, tree.metric)
            queries = queries[order]
            truth = truth[order]
        d_edge = args.d_edge
        if d_edge is None:
            d_edge = DEFAULTS["d_edge"] if tree.edges is not None else 0

        metadata = {
            "dataset": args.queries,
            "metric": tree.metric.value,
            "thread_count": args.threads,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "index_checksum": tree.pagefile.checksum,
        }

        if args.views:
            if args.dataset:
                policy = OracleRecallPolicy(ingest(args.dataset))
            else:
                policy = RadiusPolicy()
            results, survival = serve_stream(
                tree, queries, args.k, args.k_view, policy,
                edge_params=EdgeParams(d_edge=max(1, d_edge or 16), s_leaf=16),
            )
            recalls = [recall_at(r, truth[i][: args.k]) for i, r in enumerate(results) if r]
            print(f"views served {len(queries)} queries through {len(survival)} views")
            for rec in survival:
                print(f"  view {rec['view_index']:4d} seed={rec['seed_query_index']:5d} "
                      f"served={rec['queries_served']:5d} mean_recall={rec['mean_recall']}")
            print(f"mean recall {float(np.mean(recalls)):.4f}")
            _emit_records(args.records, [dict(rec, **metadata) for rec in survival])
            return 0

        betas = [int(b) for b in str(args.betas).split(",") if b]
        batches = [int(b) for b in str(args.batches).split(",") if b]
        header = (
            f"{'beta':>6} {'batch':>6} {'recall':>8} {'qps':>10} {'mean_ms':>9} "
            f"{'p99_ms':>9} {'avg_hops':>9} {'disk_reads':>11} {'cache_hits':>11}"
        )
        print(header)
        rows = []
        for beta in betas:
            for batch in batches:
                params = SearchParams(k=args.k, beta=beta, d_edge=d_edge)
                for row in queries[: min(args.warmup, len(queries))]:
                    search(tree, row, params)
                io_before = tree.io_stats()
                latencies = []
                all_results = []
                hops = []
                t0 = time.perf_counter()
                for start in range(0, len(queries), batch):
                    block = queries[start : start + batch]
                    b0 = time.perf_counter()
                    out = search_batch(tree, block, params, threads=args.threads)
                    b1 = time.perf_counter()
                    latencies.extend([(b1 - b0) / len(block)] * len(block))
                    all_results.extend(r for r, _ in out)
                    hops.extend(s.hops for _, s in out)
                total_s = time.perf_counter() - t0
                io_after = tree.io_stats()
                recall = float(
                    np.mean(
                        [recall_at(r, truth[i][: args.k]) for i, r in enumerate(all_results)]
                    )
                )
                row = {
                    "beta": beta,
                    "batch": batch,
                    "recall_k_at_k": recall,
                    "qps": len(queries) / total_s,
                    "mean_latency_ms": 1e3 * float(np.mean(latencies)),
                    "p99_latency_ms": 1e3 * float(np.percentile(latencies, 99)),
                    "avg_hops": float(np.mean(hops)),
                    "disk_reads": io_after["disk_reads"] - io_before["disk_reads"],
                    "cache_hits": io_after["cache_hits"] - io_before["cache_hits"],
                }
                rows.append(row)
                print(
                    f"{beta:>6} {batch:>6} {recall:>8.4f} {row['qps']:>10.1f} "
                    f"{row['mean_latency_ms']:>9.3f} {row['p99_latency_ms']:>9.3f} "
                    f"{row['avg_hops']:>9.2f} {row['disk_reads']:>11} {row['cache_hits']:>11}"
                )
        _emit_records(args.records, [dict(r, **metadata) for r in rows])
    return 0


def cmd_verify(args) -> int:
    tree, _ = load_tree(args.index)
    report = verify_tree(tree)
    layout = locality_report(args.index)
    print(f"tree invariants : {'ok' if report.ok else 'FAILED'}")
    for v in report.violations:
        print(f"  - {v}")
    print(f"offsets aligned : {layout['offsets_aligned']} (page {layout['page_size']})")
    print(
        f"leaf locality   : {layout['fraction_consecutive']:.3f} "
        f"({layout['consecutive_parents']}/{layout['leaf_parents']} parents consecutive)"
    )
    return 0 if report.ok else 4


def cmd_view_demo(args) -> int:
    queries = ingest(args.queries).data
    with open_index(args.index) as tree:
        if args.policy == "oracle":
            if not args.dataset:
                raise UsageError("--policy oracle needs --dataset for the brute-force truth")
            policy = OracleRecallPolicy(ingest(args.dataset))
        else:
            policy = RadiusPolicy()
        results, survival = serve_stream(
            tree, queries, args.k, args.k_view, policy,
            edge_params=EdgeParams(d_edge=16, s_leaf=16), beta=args.beta,
        )
    print(f"served {len(results)} queries through {len(survival)} views")
    for rec in survival:
        print(
            f"  view {rec['view_index']:4d} seed={rec['seed_query_index']:5d} "
            f"served={rec['queries_served']:5d} mean_recall={rec['mean_recall']}"
        )
    _emit_records(args.records, survival)
    return 0


_COMMANDS = {
    "build": cmd_build,
    "groundtruth": cmd_groundtruth,
    "query": cmd_query,
    "bench": cmd_bench,
    "verify": cmd_verify,
    "view-demo": cmd_view_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, sys.argv[1:] if argv is None else list(argv))
    try:
        return _COMMANDS[args.command](args)
    except BPlusAnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
