"""K-means++ and the recursive hierarchical partitioner.

The partitioner drives a FIFO queue: any partition larger than the split
threshold tau is re-clustered into at most K children, and partitions at or
under tau become leaves of the returned hierarchy. The hierarchy (not just
its leaves) is kept because tree construction exploits it to place sibling
clusters in adjacent tree leaves.

All distance/assignment work streams over the dataset in bounded chunks so a
file-mapped dataset is never duplicated in memory; the only O(N) working
state is per-point assignment and distance arrays.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Metric, VectorSet, distance_one_to_many
from .errors import UsageError

__all__ = ["ClusterNode", "KMeansParams", "hcluster", "kmeans_pp"]

# Rows scanned per assignment chunk; bounds peak memory at chunk * dim floats.
_CHUNK = 16384


@dataclass(frozen=True)
class KMeansParams:
    """Knobs for one k-means++ run: K clusters, at most J EM iterations,
    a seed for the sampling RNG, and an early-stop threshold on centroid
    movement."""

    K: int = 10
    J: int = 25
    seed: int = 0
    convergence_eps: float = 1e-4

    def __post_init__(self):
        if self.K < 1:
            raise UsageError(f"K must be >= 1, got {self.K}")
        if self.J < 1:
            raise UsageError(f"J must be >= 1, got {self.J}")
        if self.convergence_eps < 0:
            raise UsageError("convergence_eps must be >= 0")


@dataclass
class ClusterNode:
    """One node of the cluster hierarchy.

    Leaves carry the member ids of their final cluster; internal nodes carry
    children only. ``size`` is the total vector count of the subtree and
    ``overflow`` marks a leaf that k-means could not shrink under tau
    (duplicate-heavy data).
    """

    centroid: np.ndarray
    level: int
    member_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    children: list["ClusterNode"] = field(default_factory=list)
    size: int = 0
    overflow: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def iter_leaves(self):
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            else:
                stack.extend(reversed(node.children))

    def depth(self) -> int:
        """Longest root-to-leaf edge count."""
        if self.is_leaf:
            return 0
        return 1 + max(child.depth() for child in self.children)


def _chunked_assign(
    data: np.ndarray,
    rows: np.ndarray,
    centroids: np.ndarray,
    metric: Metric,
    centroid_norms: np.ndarray | None,
):
    """Assign each row to its nearest centroid, streaming in chunks.

    Returns (labels, distances) aligned with ``rows``.
    """
    n = len(rows)
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float32)
    for start in range(0, n, _CHUNK):
        chunk_rows = rows[start : start + _CHUNK]
        block = np.ascontiguousarray(data[chunk_rows], dtype=np.float32)
        if metric is Metric.EUCLIDEAN:
            # ||x-c||^2 = ||x||^2 - 2 x.c + ||c||^2, one sgemm per chunk
            d2 = (
                np.einsum("ij,ij->i", block, block)[:, None]
                - 2.0 * (block @ centroids.T)
                + np.einsum("ij,ij->i", centroids, centroids)[None, :]
            )
            np.maximum(d2, 0.0, out=d2)
            d = d2
        else:
            bn = np.linalg.norm(block, axis=1)
            bn[bn == 0.0] = 1.0
            d = 1.0 - (block @ centroids.T) / (bn[:, None] * centroid_norms[None, :])
        lab = np.argmin(d, axis=1)
        labels[start : start + len(chunk_rows)] = lab
        chunk_d = d[np.arange(len(chunk_rows)), lab]
        if metric is Metric.EUCLIDEAN:
            chunk_d = np.sqrt(chunk_d)
        dists[start : start + len(chunk_rows)] = chunk_d
    return labels, dists


def _chunked_means(data: np.ndarray, rows: np.ndarray, labels: np.ndarray, k: int):
    """Per-cluster float64 mean accumulated chunk-wise. Returns (means, counts)."""
    dim = data.shape[1]
    sums = np.zeros((k, dim), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for start in range(0, len(rows), _CHUNK):
        chunk_rows = rows[start : start + _CHUNK]
        chunk_labels = labels[start : start + _CHUNK]
        block = np.asarray(data[chunk_rows], dtype=np.float64)
        for c in np.unique(chunk_labels):
            sums[c] += block[chunk_labels == c].sum(axis=0)
        counts += np.bincount(chunk_labels, minlength=k)
    means = sums.copy()
    nonzero = counts > 0
    means[nonzero] /= counts[nonzero, None]
    return means, counts


def _seed_centroids(
    data: np.ndarray, rows: np.ndarray, k: int, metric: Metric, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding: first center uniform, the rest sampled proportional
    to squared distance from the nearest already-chosen center."""
    n = len(rows)
    chosen = [int(rng.integers(n))]
    min_d = None
    for _ in range(1, k):
        last = np.asarray(data[rows[chosen[-1]]], dtype=np.float32)
        d_new = np.empty(n, dtype=np.float32)
        for start in range(0, n, _CHUNK):
            block = np.ascontiguousarray(data[rows[start : start + _CHUNK]], dtype=np.float32)
            d_new[start : start + len(block)] = distance_one_to_many(last, block, metric)
        min_d = d_new if min_d is None else np.minimum(min_d, d_new)
        weights = min_d.astype(np.float64) ** 2
        total = weights.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            break
        chosen.append(int(rng.choice(n, p=weights / total)))
    return np.ascontiguousarray(data[rows[chosen]], dtype=np.float32)


def kmeans_pp(
    vset: VectorSet,
    rows: np.ndarray,
    params: KMeansParams,
    metric: Metric,
    rng: np.random.Generator | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cluster the subset ``rows`` of ``vset`` into at most K groups.

    Returns ``(centroid, member_rows)`` pairs for the nonempty clusters.
    Centroids are the exact arithmetic means of the final assignment, and the
    result is deterministic for a fixed seed. Empty clusters are re-seeded
    with the point farthest from its assigned centroid.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise UsageError("cannot cluster an empty subset")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    data = vset.data
    k = min(params.K, len(rows))
    if k == 1:
        mean, _ = _chunked_means(data, rows, np.zeros(len(rows), dtype=np.int64), 1)
        return [(mean[0].astype(np.float32), rows)]

    centroids = _seed_centroids(data, rows, k, metric, rng)
    k = len(centroids)
    labels = None
    for _ in range(params.J):
        cn = np.linalg.norm(centroids, axis=1) if metric is Metric.COSINE else None
        if cn is not None:
            cn = cn.copy()
            cn[cn == 0.0] = 1.0
        labels, dists = _chunked_assign(data, rows, centroids, metric, cn)

        # re-seed empty clusters with the globally farthest assigned point
        counts = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            far = int(np.argmax(dists))
            labels[far] = empty
            dists[far] = 0.0
            counts = np.bincount(labels, minlength=k)

        means, counts = _chunked_means(data, rows, labels, k)
        new_centroids = means.astype(np.float32)
        keep = counts > 0
        new_centroids[~keep] = centroids[~keep]
        movement = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1))) if k else 0.0
        centroids = new_centroids
        if movement < params.convergence_eps:
            break

    # final assignment against the settled centroids, then exact means so the
    # returned centroid is the mean of the returned members
    cn = np.linalg.norm(centroids, axis=1) if metric is Metric.COSINE else None
    if cn is not None:
        cn = cn.copy()
        cn[cn == 0.0] = 1.0
    labels, _ = _chunked_assign(data, rows, centroids, metric, cn)
    means, counts = _chunked_means(data, rows, labels, k)

    out = []
    for c in range(k):
        members = rows[labels == c]
        if len(members):
            out.append((means[c].astype(np.float32), members))
    return out


def hcluster(
    vset: VectorSet, tau: int, params: KMeansParams, metric: Metric
) -> ClusterNode:
    """Recursively partition ``vset`` until every leaf holds at most ``tau``
    vectors (modulo the degenerate-split guard) and return the hierarchy root.

    A FIFO queue holds partitions awaiting a split; oversized children go
    back on the queue. If k-means returns a single nonempty cluster for an
    oversized partition, the partition becomes an overflow leaf instead of
    looping forever.
    """
    if tau < 1:
        raise UsageError(f"tau must be >= 1, got {tau}")
    if vset.count == 0:
        raise UsageError("cannot cluster an empty dataset")
    rng = np.random.default_rng(params.seed)
    all_rows = np.arange(vset.count, dtype=np.int64)
    root_mean, _ = _chunked_means(vset.data, all_rows, np.zeros(vset.count, dtype=np.int64), 1)
    root = ClusterNode(centroid=root_mean[0].astype(np.float32), level=0, size=vset.count)

    queue: deque[tuple[ClusterNode, np.ndarray]] = deque()
    queue.append((root, all_rows))
    while queue:
        node, rows = queue.popleft()
        if len(rows) <= tau:
            node.member_ids = vset.ids[rows]
            continue
        clusters = kmeans_pp(vset, rows, params, metric, rng)
        if len(clusters) <= 1:
            node.member_ids = vset.ids[rows]
            node.overflow = True
            continue
        for centroid, member_rows in clusters:
            child = ClusterNode(centroid=centroid, level=node.level + 1, size=len(member_rows))
            node.children.append(child)
            if len(member_rows) > tau:
                queue.append((child, member_rows))
            else:
                child.member_ids = vset.ids[member_rows]
    return root
