"""Skip-edge graph between leaf vectors and the greedy refinement pass.

Each vector gets directed edges to its d_edge nearest vectors drawn from its
own leaf plus its leaf's s_leaf nearest leaves (by centroid distance).
Intra-leaf edges give local search; inter-leaf edges hop across block
boundaries, fixing queries that fall near a partition edge. Construction is
one block matrix product per leaf, so the total distance-evaluation count is
bounded by N * kappa_leaf * (s_leaf + 1).

The greedy pass expands candidates' edges until the retained top-k stops
changing. A shared tri-state visited map (0 unseen, 1 seen, 2 expanded)
spans the tree and greedy phases of one query and guarantees termination:
state-2 vertices are never re-expanded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Metric, Neighbor, distance_one_to_many
from .errors import UsageError

__all__ = [
    "EdgeParams",
    "SkipEdgeGraph",
    "avg_hops",
    "build_skip_edges",
    "greedy_search",
    "nearest_leaves",
]


@dataclass(frozen=True)
class EdgeParams:
    d_edge: int = 128
    s_leaf: int = 512

    def __post_init__(self):
        if self.d_edge < 1:
            raise UsageError("d_edge must be >= 1")
        if self.s_leaf < 1:
            raise UsageError("s_leaf must be >= 1")


@dataclass
class SkipEdgeGraph:
    """Adjacency over vector ids: each list holds at most d_edge neighbor
    ids, ascending by distance. ``built_over`` stamps the tree version the
    graph was computed from; leaves touched by later inserts are recorded in
    ``stale_leaves`` and re-linked on the next build."""

    adjacency: dict[int, np.ndarray]
    d_edge: int
    s_leaf: int
    built_over: int = 0
    distance_evals_build: int = 0
    stale_leaves: set[int] = field(default_factory=set)

    def neighbors(self, vector_id: int, stats=None) -> np.ndarray:
        return self.adjacency.get(int(vector_id), _EMPTY_IDS)

    def out_degree(self, vector_id: int) -> int:
        return len(self.neighbors(vector_id))


_EMPTY_IDS = np.empty(0, dtype=np.int64)


def _pairwise_centroid_distances(centroids: np.ndarray, metric: Metric) -> np.ndarray:
    """Full pairwise distance matrix in float64 (leaf counts are small)."""
    c = centroids.astype(np.float64)
    if metric is Metric.EUCLIDEAN:
        sq = np.einsum("ij,ij->i", c, c)
        d2 = sq[:, None] - 2.0 * (c @ c.T) + sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        return np.sqrt(d2)
    norms = np.linalg.norm(c, axis=1)
    norms[norms == 0.0] = 1.0
    return 1.0 - (c @ c.T) / np.outer(norms, norms)


def nearest_leaves(tree, s_leaf: int, metric: Metric | None = None) -> dict[int, list[int]]:
    """For every leaf, the s_leaf other leaves with the smallest centroid
    distance (ties by leaf id). Costs one N_leaf^2 pairwise computation."""
    metric = metric or tree.metric
    leaf_ids = tree.leaf_ids()
    if not leaf_ids:
        raise UsageError("tree has no leaves")
    ids = np.asarray(leaf_ids, dtype=np.int64)
    centroids = np.stack([tree.fetch(l).centroid for l in leaf_ids])
    dist = _pairwise_centroid_distances(centroids, metric)
    out: dict[int, list[int]] = {}
    for i, lid in enumerate(leaf_ids):
        order = np.lexsort((ids, dist[i]))
        picked = [int(ids[j]) for j in order if ids[j] != lid][:s_leaf]
        out[lid] = picked
    return out


def _block_distances(block: np.ndarray, pool: np.ndarray, metric: Metric) -> np.ndarray:
    """Distance ordering surrogate between every row of block and pool as one
    matrix product (squared distances for euclidean; order is what matters)."""
    if metric is Metric.EUCLIDEAN:
        a2 = np.einsum("ij,ij->i", block, block)
        b2 = np.einsum("ij,ij->i", pool, pool)
        d = a2[:, None] - 2.0 * (block @ pool.T) + b2[None, :]
        np.maximum(d, 0.0, out=d)
        return d
    an = np.linalg.norm(block, axis=1)
    bn = np.linalg.norm(pool, axis=1)
    an[an == 0.0] = 1.0
    bn[bn == 0.0] = 1.0
    return 1.0 - (block @ pool.T) / np.outer(an, bn)


def build_skip_edges(tree, params: EdgeParams, metric: Metric | None = None) -> SkipEdgeGraph:
    """Link every leaf vector to its d_edge nearest candidates from its own
    leaf plus its leaf's s_leaf nearest leaves. Deterministic given the tree
    and params; also attached to the tree as ``tree.edges``."""
    metric = metric or tree.metric
    near = nearest_leaves(tree, params.s_leaf, metric)
    adjacency: dict[int, np.ndarray] = {}
    evals = 0
    for leaf_id in tree.leaf_ids():
        leaf = tree.fetch(leaf_id)
        if leaf.entry_count == 0:
            continue
        pool_leaves = [leaf_id] + near[leaf_id]
        pool_ids = np.concatenate([tree.fetch(l).vector_ids for l in pool_leaves])
        pool_vecs = np.concatenate([tree.fetch(l).vectors for l in pool_leaves])
        dist = _block_distances(leaf.vectors, pool_vecs, metric)
        evals += dist.size
        take = min(params.d_edge + 1, dist.shape[1])
        part = np.argpartition(dist, take - 1, axis=1)[:, :take] if take < dist.shape[1] else None
        for row, vid in enumerate(leaf.vector_ids):
            cand = part[row] if part is not None else np.arange(dist.shape[1])
            order = np.lexsort((pool_ids[cand], dist[row, cand]))
            picked = [int(pool_ids[cand[j]]) for j in order if pool_ids[cand[j]] != vid]
            adjacency[int(vid)] = np.asarray(picked[: params.d_edge], dtype=np.int64)
    graph = SkipEdgeGraph(
        adjacency=adjacency,
        d_edge=params.d_edge,
        s_leaf=params.s_leaf,
        built_over=tree.version,
        distance_evals_build=evals,
    )
    tree.edges = graph
    return graph


class GreedyState:
    """Per-query greedy refinement state, advanced one round at a time.

    Factoring the round out lets the batched engine run many queries in
    lockstep (scoring all newly discovered vectors in one kernel call)
    while sharing the exact per-round semantics of the sequential path.
    """

    __slots__ = ("pool", "retained", "done", "sign", "k")

    def __init__(self, seeds: list[Neighbor], k: int, visited: dict[int, int], largest: bool):
        if not seeds:
            raise UsageError("greedy refinement needs a nonempty seed pool")
        self.sign = -1.0 if largest else 1.0
        self.k = k
        self.pool: dict[int, float] = {}
        for n in seeds:
            vid = int(n.id)
            self.pool[vid] = float(n.distance)
            if visited.get(vid, 0) == 0:
                visited[vid] = 1
        self.retained = sorted(self.pool)
        self.done = False

    def expand(self, graph, visited: dict[int, int], stats=None) -> list[int]:
        """Walk the edges of retained-but-unexpanded candidates; returns the
        newly discovered vector ids (marked state 1, owner marked state 2)."""
        new_ids: list[int] = []
        for vid in self.retained:
            if visited.get(vid, 0) > 1:
                continue
            for u in graph.neighbors(vid, stats):
                u = int(u)
                if visited.get(u, 0) == 0:
                    visited[u] = 1
                    new_ids.append(u)
            visited[vid] = 2
            if stats is not None:
                stats.hops += 1
        return new_ids

    def absorb(self, new_ids, distances) -> None:
        """Fold scored discoveries into the pool, keep the k best, and stop
        at the fixed point (retained id set unchanged)."""
        for u, du in zip(new_ids, distances):
            self.pool[u] = float(du)
        kept = sorted(self.pool.items(), key=lambda t: (self.sign * t[1], t[0]))[: self.k]
        self.pool = dict(kept)
        now = sorted(self.pool)
        if now == self.retained:
            self.done = True
        self.retained = now

    def result(self) -> list[Neighbor]:
        ordered = sorted(self.pool.items(), key=lambda t: (self.sign * t[1], t[0]))
        return [Neighbor(vid, d) for vid, d in ordered]


def greedy_search(
    graph,
    source,
    q,
    seeds: list[Neighbor],
    k: int,
    visited: dict[int, int],
    metric: Metric,
    stats=None,
    largest: bool = False,
) -> list[Neighbor]:
    """Refine a candidate pool by walking skip edges to a fixed point.

    Every seed is marked at least state 1 on entry. Each round expands the
    edges of retained candidates not yet expanded (state <= 1), scores the
    newly discovered vectors in one block, and keeps the k best; the loop
    stops when the retained id set is unchanged. ``largest`` inverts the
    ordering for dissimilarity search.
    """
    q = np.asarray(q, dtype=np.float32)
    state = GreedyState(seeds, k, visited, largest)
    while not state.done:
        new_ids = state.expand(graph, visited, stats)
        if new_ids:
            vecs = source.vectors_for(new_ids, stats)
            d = distance_one_to_many(q, vecs, metric)
            if stats is not None:
                stats.distance_evals += len(new_ids)
        else:
            d = ()
        state.absorb(new_ids, d)
    return state.result()


def avg_hops(stats_seq) -> float:
    """Mean greedy hop count over a recorded query set."""
    stats_list = list(stats_seq)
    if not stats_list:
        raise UsageError("avg_hops needs at least one recorded query")
    return float(np.mean([s.hops for s in stats_list]))
