"""Semantic views: a memory-resident sub-tree induced by a seed query.

A view copies every base leaf that holds one of the seed's k-ANNs, rebuilds
a minimal connecting structure (the leaves' original parents under one
synthetic sub-root), and links the copied leaves with fresh skip edges.
Subsequent queries are answered entirely from the view until an exhaustion
policy declares it stale, at which point the stream server extracts a new
view seeded by the failing query. The number of queries a view answers
before replacement is its survival time.

Views are immutable snapshots: creating or querying one never touches the
base index, so the base can keep absorbing inserts while a view serves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Metric, Neighbor, VectorSet, brute_force_knn, recall_at
from .edges import EdgeParams, build_skip_edges
from .errors import UsageError
from .search import SearchParams, search
from .tree import INNER, LEAF, BPlusAnnTree, BuildParams, TreeNode

__all__ = [
    "OracleRecallPolicy",
    "RadiusPolicy",
    "View",
    "create_view",
    "serve_stream",
    "view_search",
]


@dataclass
class View:
    seed_query: np.ndarray
    k_view: int
    subtree: BPlusAnnTree
    edges: object
    created_at: int = 0
    served: int = 0
    seed_distances: list[float] = field(default_factory=list)

    def contains(self, vector_id: int) -> bool:
        return int(vector_id) in self.subtree.id_loc

    @property
    def leaf_ids(self) -> list[int]:
        return self.subtree.leaf_ids()

    def seed_kth_distance(self, k: int) -> float:
        if not self.seed_distances:
            return float("inf")
        return self.seed_distances[min(k, len(self.seed_distances)) - 1]


class RadiusPolicy:
    """Deployable exhaustion proxy: the view is stale when its best answer
    sits beyond ``scale`` times the seed search's k-th distance."""

    def __init__(self, scale: float = 2.0):
        self.scale = scale

    def assess(self, view: View, q, results: list[Neighbor]) -> tuple[bool, float | None]:
        if not results:
            return False, None
        threshold = view.seed_kth_distance(len(results)) * self.scale
        return results[0].distance <= threshold, None


class OracleRecallPolicy:
    """Test-only exhaustion rule: brute-force the true neighbors and declare
    the view exhausted when recall hits zero."""

    def __init__(self, vset: VectorSet, metric: Metric | None = None):
        self.vset = vset
        self.metric = metric

    def assess(self, view: View, q, results: list[Neighbor]) -> tuple[bool, float | None]:
        if not results:
            return False, 0.0
        metric = self.metric or view.subtree.metric
        truth = brute_force_knn(self.vset, q, len(results), metric)
        r = recall_at(results, truth)
        return r > 0.0, r


def _copy_leaf(node: TreeNode) -> TreeNode:
    copy = TreeNode(node.node_id, LEAF, 0, node.centroid.copy())
    copy.set_leaf_entries(node.vector_ids.copy(), node.vectors.copy())
    return copy


def _weighted_mean(centroids: np.ndarray, counts: np.ndarray) -> np.ndarray:
    w = counts.astype(np.float64)
    return ((centroids.astype(np.float64) * w[:, None]).sum(axis=0) / w.sum()).astype(np.float32)


def create_view(handle, q_t, k_view: int, edge_params: EdgeParams,
                beta: int = 32, d_edge: int | None = None) -> View:
    """Extract the sub-tree induced by the seed's k_view-ANNs.

    Runs the base search, copies every leaf holding a result id, rebuilds
    the leaves' parents (entries restricted to the copied leaves) under a
    synthetic sub-root, and builds skip edges over the copied leaves. The
    base index is left untouched.
    """
    total = handle.count
    if total == 0:
        raise UsageError("cannot create a view over an empty index")
    if k_view < 1 or k_view > total:
        raise UsageError(f"k_view must be in [1, {total}], got {k_view}")
    if d_edge is None:
        d_edge = edge_params.d_edge if handle.edges is not None else 0
    q_t = np.asarray(q_t, dtype=np.float32)
    results, _ = search(handle, q_t, SearchParams(k=k_view, beta=beta, d_edge=d_edge))

    leaf_ids = sorted({handle.leaf_of(n.id) for n in results})
    nodes: dict[int, TreeNode] = {}
    parent_children: dict[int | None, list[int]] = {}
    for lid in leaf_ids:
        base_leaf = handle.fetch(lid)
        try:
            nodes[lid] = _copy_leaf(base_leaf)
            parent_children.setdefault(base_leaf.parent, []).append(lid)
        finally:
            handle.release(lid)

    if parent_children.get(None):
        # base tree is a single root leaf; the view is that leaf alone
        root_id = leaf_ids[0]
    else:
        parent_ids = sorted(parent_children)
        for pid in parent_ids:
            children = parent_children[pid]
            centroids = np.stack([nodes[c].centroid for c in children])
            counts = np.asarray([nodes[c].vector_count for c in children], dtype=np.int64)
            parent = TreeNode(pid, INNER, 1, _weighted_mean(centroids, counts))
            parent.set_inner_entries(children, centroids, counts)
            nodes[pid] = parent
        if len(parent_ids) == 1:
            root_id = parent_ids[0]
        else:
            root_id = max(nodes) + 1
            centroids = np.stack([nodes[p].centroid for p in parent_ids])
            counts = np.asarray([nodes[p].vector_count for p in parent_ids], dtype=np.int64)
            root = TreeNode(root_id, INNER, 2, _weighted_mean(centroids, counts))
            root.set_inner_entries(parent_ids, centroids, counts)
            nodes[root_id] = root

    params = BuildParams(
        kappa_leaf=handle.kappa_leaf, kappa_inner=handle.kappa_inner, metric=handle.metric
    )
    subtree = BPlusAnnTree.from_nodes(handle.dim, params, nodes, root_id)
    graph = build_skip_edges(subtree, edge_params)
    return View(
        seed_query=q_t.copy(),
        k_view=k_view,
        subtree=subtree,
        edges=graph,
        seed_distances=[n.distance for n in results],
    )


def view_search(
    view: View, q, params: SearchParams, policy=None
) -> tuple[list[Neighbor], bool]:
    """Answer one query from the view. ``in_view`` is False when the
    exhaustion policy says the view no longer covers the query."""
    results, _ = search(view.subtree, q, params)
    view.served += 1
    if policy is None:
        policy = RadiusPolicy()
    in_view, _ = policy.assess(view, q, results)
    return results, in_view


def serve_stream(
    handle,
    queries: np.ndarray,
    k: int,
    k_view: int,
    policy,
    edge_params: EdgeParams | None = None,
    beta: int = 32,
    view_beta: int | None = None,
) -> tuple[list[list[Neighbor]], list[dict]]:
    """Serve an ordered query stream through successive views.

    Each query is answered from the current view; on exhaustion a new view is
    extracted seeded by the failing query and the query is re-served from it
    (its answer then counts toward the new view). Returns per-query results
    plus one survival record per view.
    """
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim != 2 or len(queries) == 0:
        raise UsageError("serve_stream needs a nonempty 2-D query block")
    edge_params = edge_params or EdgeParams(d_edge=16, s_leaf=8)
    view_beta = view_beta or beta

    d_edge = min(edge_params.d_edge, 64)
    view_params = SearchParams(k=k, beta=view_beta, d_edge=d_edge)

    results: list[list[Neighbor]] = []
    survival: list[dict] = []
    view_index = 0
    seed_index = 0
    served_by_view = 0
    recalls: list[float] = []

    def log_view():
        survival.append(
            {
                "view_index": view_index,
                "seed_query_index": seed_index,
                "queries_served": served_by_view,
                "mean_recall": float(np.mean(recalls)) if recalls else None,
            }
        )

    view = create_view(handle, queries[0], k_view, edge_params, beta=beta)
    for t, q in enumerate(queries):
        answer, _ = search(view.subtree, q, view_params)
        view.served += 1
        in_view, r = policy.assess(view, q, answer)
        if not in_view and t != seed_index:
            # exhausted: replace the view, seeded by the failing query, and
            # re-serve it (the answer then counts toward the new view)
            log_view()
            view_index += 1
            seed_index = t
            served_by_view = 0
            recalls = []
            view = create_view(handle, q, k_view, edge_params, beta=beta)
            answer, _ = search(view.subtree, q, view_params)
            view.served += 1
            _, r = policy.assess(view, q, answer)
        results.append(answer)
        served_by_view += 1
        if r is not None:
            recalls.append(r)
    log_view()
    return results, survival
