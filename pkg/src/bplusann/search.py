"""Query execution: priority-queue BFS over the tree plus greedy refinement.

Descent is level-synchronous: the current frontier is expanded, children are
pushed onto a per-level priority queue keyed by centroid distance, and the
beta best become the next frontier (the queue is cleared between levels). At
the leaf level the query is scored against whole vector blocks in one
vectorized operation, candidates are deduplicated through the shared
tri-state visited map, and, when enabled, the skip-edge greedy pass refines
the pool. Dissimilarity search runs the same machinery with the ordering
inverted at every stage.

With beta at least the node count per level the traversal degenerates to an
exhaustive scan and returns exactly the brute-force answer.
"""

from __future__ import annotations

import heapq
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import Metric, Neighbor, VectorSet, distance_one_to_many
from .edges import greedy_search
from .errors import UsageError

__all__ = [
    "FarthestRngBaseline",
    "SearchParams",
    "SearchStats",
    "rng_dissimilar_baseline",
    "search",
    "search_batch",
    "search_dissimilar",
]


@dataclass(frozen=True)
class SearchParams:
    """k results, beta frontier nodes expanded per level, d_edge > 0 enables
    (and caps) greedy skip-edge refinement."""

    k: int
    beta: int = 32
    d_edge: int = 0
    metric: Metric | None = None
    dissimilar: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.beta < 1:
            raise UsageError("beta must be >= 1")
        if self.d_edge < 0:
            raise UsageError("d_edge must be >= 0")


@dataclass
class SearchStats:
    nodes_visited: int = 0
    hops: int = 0
    distance_evals: int = 0
    disk_reads: int = 0
    cache_hits: int = 0


class _TruncatedGraph:
    """View of a skip-edge graph limited to the first (nearest) d_edge
    neighbors per vertex."""

    def __init__(self, graph, d_edge: int):
        self._graph = graph
        self._d_edge = d_edge

    def neighbors(self, vector_id: int, stats=None) -> np.ndarray:
        return self._graph.neighbors(vector_id, stats)[: self._d_edge]


def _ordered(entries: list[tuple[float, int]], k: int, sign: float) -> list[Neighbor]:
    entries = sorted(entries, key=lambda t: (sign * t[0], t[1]))[:k]
    return [Neighbor(vid, d) for d, vid in entries]


def search(tree, q, params: SearchParams) -> tuple[list[Neighbor], SearchStats]:
    """Top-k traversal of the tree (plus optional greedy refinement).

    Returns the k best collected candidates sorted by distance (ascending,
    or descending in dissimilar mode; ties by smaller id) and the traversal
    statistics.
    """
    stats = SearchStats()
    q = np.asarray(q, dtype=np.float32)
    if q.shape != (tree.dim,):
        raise UsageError(f"query shape {q.shape} does not match index dim {tree.dim}")
    metric = params.metric or tree.metric
    sign = -1.0 if params.dissimilar else 1.0

    graph = tree.edges
    if params.d_edge > 0:
        if graph is None:
            raise UsageError("index has no skip edges; build them or search with d_edge=0")
        graph = _TruncatedGraph(graph, params.d_edge)

    visited: dict[int, int] = {}
    pool: list[tuple[float, int]] = []
    frontier = [tree.root_id]
    while frontier:
        level_queue: list[tuple[float, int]] = []
        for nid in frontier:
            stats.nodes_visited += 1
            node = tree.fetch(nid, stats)
            try:
                if node.entry_count == 0:
                    continue
                norms = node.entry_norms() if metric is Metric.COSINE else None
                if not node.is_leaf:
                    d = distance_one_to_many(q, node.child_centroids, metric, block_norms=norms)
                    stats.distance_evals += len(d)
                    child_ids = np.asarray(node.children, dtype=np.int64)
                    order = np.lexsort((child_ids, sign * d))
                    for j in order[: min(params.beta, len(order))]:
                        level_queue.append((sign * float(d[j]), int(child_ids[j])))
                else:
                    d = distance_one_to_many(q, node.vectors, metric, block_norms=norms)
                    stats.distance_evals += len(d)
                    order = np.lexsort((node.vector_ids, sign * d))[: params.k]
                    for j in order:
                        vid = int(node.vector_ids[j])
                        if visited.get(vid, 0) == 0:
                            visited[vid] = 1
                            pool.append((float(d[j]), vid))
                    if params.d_edge > 0 and pool:
                        refined = greedy_search(
                            graph,
                            tree,
                            q,
                            [Neighbor(vid, dist) for dist, vid in pool],
                            params.k,
                            visited,
                            metric,
                            stats=stats,
                            largest=params.dissimilar,
                        )
                        pool = [(n.distance, n.id) for n in refined]
            finally:
                tree.release(nid)
        frontier = [nid for _, nid in heapq.nsmallest(params.beta, level_queue)]
    return _ordered(pool, params.k, sign), stats


def _default_threads() -> int:
    env = os.environ.get("BPLUSANN_THREADS")
    if env:
        return max(1, int(env))
    return min(16, os.cpu_count() or 1)


def search_batch(
    tree, queries: np.ndarray, params: SearchParams, threads: int | None = None
) -> list[tuple[list[Neighbor], SearchStats]]:
    """Run one search per row of ``queries``, fanning queries out across a
    thread pool (searches are read-only and independent, and the numeric
    kernels release the GIL). Results are identical to sequential calls."""
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim != 2 or queries.shape[1] != tree.dim:
        raise UsageError(f"query batch shape {queries.shape} does not match index dim {tree.dim}")
    threads = threads or _default_threads()
    if len(queries) <= 1 or threads == 1:
        return [search(tree, row, params) for row in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda row: search(tree, row, params), queries))


def search_dissimilar(
    tree, q, params: SearchParams, scope=None
) -> tuple[list[Neighbor], SearchStats]:
    """k farthest vectors by max-priority traversal; with ``scope`` given the
    traversal is confined to that view's sub-tree, i.e. dissimilarity within
    the view's context."""
    if not params.dissimilar:
        params = replace(params, dissimilar=True)
    if scope is not None:
        return search(scope.subtree, q, params)
    return search(tree, q, params)


class FarthestRngBaseline:
    """Comparison baseline: a graph linking every vector to its farthest
    vector (symmetrized), traversed greedily with inverted ordering. Build
    is one O(N^2) pairwise pass, so keep the set small."""

    def __init__(self, vset: VectorSet, metric: Metric = Metric.EUCLIDEAN):
        self.vset = vset
        self.metric = metric
        adjacency: dict[int, set[int]] = {int(i): set() for i in vset.ids}
        for row in range(vset.count):
            d = distance_one_to_many(
                vset.data[row],
                vset.data,
                metric,
                block_norms=vset.norms if metric is Metric.COSINE else None,
            )
            order = np.lexsort((vset.ids, -d))
            far = int(vset.ids[order[0]])
            me = int(vset.ids[row])
            if far != me:
                adjacency[me].add(far)
                adjacency[far].add(me)
        self.adjacency = {
            vid: np.asarray(sorted(nbrs), dtype=np.int64) for vid, nbrs in adjacency.items()
        }

    def neighbors(self, vector_id: int, stats=None) -> np.ndarray:
        return self.adjacency.get(int(vector_id), np.empty(0, dtype=np.int64))

    def degree(self, vector_id: int) -> int:
        return len(self.neighbors(vector_id))

    def query(self, q, k: int) -> list[Neighbor]:
        start = int(self.vset.ids[0])
        d0 = float(
            distance_one_to_many(q, self.vset.data[:1], self.metric)[0]
            if self.vset.count
            else 0.0
        )
        visited: dict[int, int] = {}
        return greedy_search(
            self, self.vset, q, [Neighbor(start, d0)], k, visited, self.metric, largest=True
        )


def rng_dissimilar_baseline(
    vset: VectorSet, q, k: int, metric: Metric = Metric.EUCLIDEAN
) -> list[Neighbor]:
    """Build the farthest-neighbor graph and answer one dissimilarity query
    over it (the comparison baseline; rebuilt per call)."""
    return FarthestRngBaseline(vset, metric).query(q, k)
