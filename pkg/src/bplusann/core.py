"""Vector storage, distance metrics, and the exact brute-force oracle.

Everything downstream (clustering, tree build, search, recall evaluation)
goes through the primitives in this module, so they are deliberately small
and fully deterministic: equal inputs give bitwise-equal outputs, and ties
on distance are always broken by ascending id.
"""

from __future__ import annotations

import enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, UsageError

__all__ = [
    "Backing",
    "Metric",
    "Neighbor",
    "VectorSet",
    "brute_force_knn",
    "distance",
    "distance_block_to_many",
    "distance_one_to_many",
    "distance_pairs",
    "recall_at",
]


class Metric(enum.Enum):
    """Distance function: straight-line L2 or 1 - cos(angle)."""

    EUCLIDEAN = "euclidean"
    COSINE = "cosine"

    @classmethod
    def parse(cls, name: str) -> "Metric":
        try:
            return cls(name.lower())
        except ValueError:
            raise UsageError(f"unknown metric {name!r}; expected 'euclidean' or 'cosine'")

    @property
    def code(self) -> int:
        """Single-byte code used in the on-disk header."""
        return 0 if self is Metric.EUCLIDEAN else 1

    @classmethod
    def from_code(cls, code: int) -> "Metric":
        if code == 0:
            return cls.EUCLIDEAN
        if code == 1:
            return cls.COSINE
        raise UsageError(f"unknown metric code {code}")


class Backing(enum.Enum):
    RESIDENT = "resident"
    FILE_MAPPED = "file-mapped"


class Neighbor(NamedTuple):
    """One search result: a vector id and its distance to the query."""

    id: int
    distance: float


class VectorSet:
    """A dataset of fixed-dimension float32 vectors with stable integer ids.

    ``data`` may be an in-memory array or a strided view into a memory-mapped
    file; ``backing`` records which. All vectors are validated finite at
    construction, and per-vector L2 norms are cached on first use (cosine
    search does repeated dot products against the same stored vectors).
    """

    def __init__(
        self,
        data: np.ndarray,
        ids: np.ndarray | None = None,
        backing: Backing = Backing.RESIDENT,
    ):
        data = np.asarray(data)
        if data.ndim != 2:
            raise UsageError(f"vector data must be 2-D (count, dim), got shape {data.shape}")
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        if data.size and not np.isfinite(data).all():
            raise UsageError("vector data contains NaN or Inf; refusing to ingest")
        self._data = data
        if ids is None:
            ids = np.arange(data.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (data.shape[0],):
                raise UsageError("ids must be one per vector")
            if len(np.unique(ids)) != len(ids):
                raise UsageError("vector ids must be unique")
        self._ids = ids
        self.backing = backing
        self._norms: np.ndarray | None = None
        self._row_of: dict[int, int] | None = None

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def dim(self) -> int:
        return int(self._data.shape[1])

    @property
    def count(self) -> int:
        return int(self._data.shape[0])

    def __len__(self) -> int:
        return self.count

    @property
    def norms(self) -> np.ndarray:
        """Per-vector L2 norms, computed once and cached."""
        if self._norms is None:
            self._norms = np.linalg.norm(self._data.astype(np.float32), axis=1)
        return self._norms

    def row_of(self, vector_id: int) -> int:
        if self._row_of is None:
            self._row_of = {int(v): i for i, v in enumerate(self._ids)}
        try:
            return self._row_of[int(vector_id)]
        except KeyError:
            raise UsageError(f"unknown vector id {vector_id}")

    def vectors_for(self, vector_ids: Iterable[int], stats=None) -> np.ndarray:
        """Gather vectors by id as a dense float32 block. ``stats`` is accepted
        for interface parity with disk-resident sources and ignored here."""
        rows = [self.row_of(v) for v in vector_ids]
        return np.ascontiguousarray(self._data[rows], dtype=np.float32)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise UsageError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def distance(a, b, metric: Metric) -> float:
    """Distance between two vectors under ``metric``.

    Raises ``DomainError`` for a zero vector under cosine, where the angle
    is undefined.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    _check_dims(a, b)
    if metric is Metric.EUCLIDEAN:
        return float(np.linalg.norm(a - b))
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine distance is undefined for the zero vector")
    return float(1.0 - float(np.dot(a, b)) / (na * nb))


def distance_one_to_many(
    q,
    block: np.ndarray,
    metric: Metric,
    block_norms: np.ndarray | None = None,
) -> np.ndarray:
    """Distances from one query to every row of ``block`` as a single
    vectorized operation. For cosine, ``block_norms`` skips recomputing the
    stored vectors' norms.

    The kernels are einsum row reductions on purpose: the batched variants
    below reduce each row with the identical element order, so batched and
    per-query evaluation agree bitwise (a plain BLAS matvec would not).
    """
    q = np.asarray(q, dtype=np.float32)
    block = np.asarray(block, dtype=np.float32)
    _check_dims(q, block)
    if block.shape[0] == 0:
        return np.empty(0, dtype=np.float32)
    if metric is Metric.EUCLIDEAN:
        diff = block - q[None, :]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff, dtype=np.float32))
    nq = float(np.linalg.norm(q))
    if nq == 0.0:
        raise DomainError("cosine distance is undefined for the zero vector")
    if block_norms is None:
        block_norms = np.linalg.norm(block, axis=1)
    denom = block_norms * nq
    if np.any(denom == 0.0):
        raise DomainError("cosine distance is undefined for the zero vector")
    return (1.0 - np.einsum("ij,j->i", block, q) / denom).astype(np.float32)


def distance_block_to_many(
    queries: np.ndarray,
    block: np.ndarray,
    metric: Metric,
    block_norms: np.ndarray | None = None,
    query_norms: np.ndarray | None = None,
) -> np.ndarray:
    """Distances from a batch of queries to every row of ``block`` as one
    matrix operation; row b equals distance_one_to_many(queries[b], block)
    bitwise. Returns shape (len(queries), len(block))."""
    queries = np.asarray(queries, dtype=np.float32)
    block = np.asarray(block, dtype=np.float32)
    _check_dims(queries, block)
    if block.shape[0] == 0 or queries.shape[0] == 0:
        return np.empty((queries.shape[0], block.shape[0]), dtype=np.float32)
    if metric is Metric.EUCLIDEAN:
        # chunk the (b, m, dim) difference tensor to bound peak memory
        out = np.empty((queries.shape[0], block.shape[0]), dtype=np.float32)
        step = max(1, (32 << 20) // max(1, block.size * 4))
        for start in range(0, queries.shape[0], step):
            diff = block[None, :, :] - queries[start : start + step, None, :]
            out[start : start + step] = np.sqrt(
                np.einsum("bij,bij->bi", diff, diff, dtype=np.float32)
            )
        return out
    if query_norms is None:
        # the 1-D norm kernel, per row, to match the single-query path bitwise
        query_norms = np.asarray([np.linalg.norm(q) for q in queries], dtype=np.float32)
    if block_norms is None:
        block_norms = np.linalg.norm(block, axis=1)
    denom = block_norms[None, :] * query_norms[:, None]
    if np.any(denom == 0.0):
        raise DomainError("cosine distance is undefined for the zero vector")
    dots = np.einsum("ij,bj->bi", block, queries)
    return (1.0 - dots / denom).astype(np.float32)


def distance_pairs(
    queries: np.ndarray, vectors: np.ndarray, metric: Metric
) -> np.ndarray:
    """Row-wise distances between aligned (query, vector) pairs; element i
    equals distance_one_to_many(queries[i], vectors[i:i+1])[0] bitwise."""
    queries = np.asarray(queries, dtype=np.float32)
    vectors = np.asarray(vectors, dtype=np.float32)
    if queries.shape != vectors.shape:
        raise UsageError("paired distance needs matching shapes")
    if len(queries) == 0:
        return np.empty(0, dtype=np.float32)
    if metric is Metric.EUCLIDEAN:
        diff = vectors - queries
        return np.sqrt(np.einsum("ij,ij->i", diff, diff, dtype=np.float32))
    qn = np.asarray([np.linalg.norm(q) for q in queries], dtype=np.float32)
    vn = np.linalg.norm(vectors, axis=1)
    denom = vn * qn
    if np.any(denom == 0.0):
        raise DomainError("cosine distance is undefined for the zero vector")
    return (1.0 - np.einsum("ij,ij->i", vectors, queries) / denom).astype(np.float32)


def _order_by_distance(dist: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Indices sorting ascending by distance, ties broken by smaller id."""
    return np.lexsort((ids, dist))


def brute_force_knn(vset: VectorSet, q, k: int, metric: Metric) -> list[Neighbor]:
    """Exact k nearest neighbors by full scan: the oracle behind every recall
    figure. Ascending distance, ties by smaller id."""
    if k < 1:
        raise UsageError("k must be >= 1")
    if k > vset.count:
        raise UsageError(f"k={k} exceeds dataset size {vset.count}")
    norms = vset.norms if metric is Metric.COSINE else None
    dist = distance_one_to_many(q, vset.data, metric, block_norms=norms)
    order = _order_by_distance(dist, vset.ids)[:k]
    return [Neighbor(int(vset.ids[i]), float(dist[i])) for i in order]


def _id_set(neighbors: Sequence) -> set[int]:
    out = set()
    for n in neighbors:
        out.add(int(n.id) if hasattr(n, "id") else int(n))
    return out


def recall_at(approx: Sequence, truth: Sequence) -> float:
    """Fraction of the true neighbor ids present in the approximate result.

    Accepts ``Neighbor`` sequences or bare id sequences; order-insensitive.
    """
    truth_ids = _id_set(truth)
    if not truth_ids:
        raise UsageError("recall is undefined for an empty truth set")
    return len(_id_set(approx) & truth_ids) / len(truth_ids)
