"""The B+ANN tree: a self-balancing B+tree variant keyed by centroids.

Inner nodes map child centroids to child node ids; leaves map the leaf
centroid to a block of (vector id, vector) entries. Bulk build consumes the
cluster hierarchy and inserts whole blocks (never one vector at a time), in
hierarchy DFS order so sibling clusters land in adjacent leaves. Single
inserts descend by nearest centroid, update centroids incrementally along
the path, and split overfull nodes with 2-means, cascading upward.

Levels count up from the leaves: every leaf is level 0 and the root is at
``height - 1``, which keeps all leaves at equal depth as the root splits.

The mutation entry points (``insert``, ``split_node``) work against a small
owner interface (fetch/register/drop/set_root/mark_dirty) implemented by
both the in-memory tree and the disk-resident handle, so the disk path gets
the same semantics for free.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterNode, KMeansParams, kmeans_pp
from .core import Metric, VectorSet, distance_one_to_many
from .errors import IntegrityError, UsageError

__all__ = [
    "BPlusAnnTree",
    "BuildParams",
    "InsertReport",
    "TreeNode",
    "VerifyReport",
    "build_tree",
    "insert",
    "split_node",
    "verify_tree",
]

INNER = "inner"
LEAF = "leaf"

# exact centroid recompute after this many incremental updates to one node
_RECOMPUTE_EVERY = 256

_CENTROID_RTOL = 1e-4


@dataclass(frozen=True)
class BuildParams:
    kappa_leaf: int = 2048
    kappa_inner: int = 1024
    metric: Metric = Metric.EUCLIDEAN
    seed: int = 0

    def __post_init__(self):
        if self.kappa_leaf < 1:
            raise UsageError("kappa_leaf must be >= 1")
        if self.kappa_inner < 4:
            raise UsageError("kappa_inner must be >= 4")


@dataclass(frozen=True)
class InsertReport:
    leaf: int
    splits: int


class TreeNode:
    """One tree node. Mutations go through the helper methods so cached
    norms stay consistent."""

    __slots__ = (
        "node_id",
        "kind",
        "level",
        "parent",
        "centroid",
        "vector_count",
        "children",
        "child_centroids",
        "child_counts",
        "vector_ids",
        "vectors",
        "edge_lists",
        "_norms",
    )

    def __init__(self, node_id: int, kind: str, level: int, centroid: np.ndarray, parent=None):
        self.node_id = node_id
        self.kind = kind
        self.level = level
        self.parent = parent
        self.centroid = np.asarray(centroid, dtype=np.float32)
        self.vector_count = 0
        self.children: list[int] = []
        self.child_centroids: np.ndarray | None = None
        self.child_counts: np.ndarray | None = None
        self.vector_ids: np.ndarray | None = None
        self.vectors: np.ndarray | None = None
        self.edge_lists: list[np.ndarray] | None = None
        self._norms: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.kind == LEAF

    @property
    def entry_count(self) -> int:
        if self.is_leaf:
            return 0 if self.vector_ids is None else len(self.vector_ids)
        return len(self.children)

    def entry_norms(self) -> np.ndarray:
        """L2 norms of the entry keys (leaf vectors / child centroids), cached."""
        if self._norms is None:
            block = self.vectors if self.is_leaf else self.child_centroids
            self._norms = np.linalg.norm(block, axis=1)
        return self._norms

    # -- leaf mutation -----------------------------------------------------

    def set_leaf_entries(self, vector_ids, vectors, edge_lists=None):
        self.vector_ids = np.asarray(vector_ids, dtype=np.int64)
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self.edge_lists = edge_lists
        self.vector_count = len(self.vector_ids)
        self._norms = None

    def append_leaf_entry(self, vector_id: int, vector: np.ndarray):
        self.vector_ids = np.append(self.vector_ids, np.int64(vector_id))
        self.vectors = np.concatenate([self.vectors, vector[None, :].astype(np.float32)])
        if self.edge_lists is not None:
            self.edge_lists.append(np.empty(0, dtype=np.int64))
        self.vector_count = len(self.vector_ids)
        self._norms = None

    # -- inner mutation ----------------------------------------------------

    def set_inner_entries(self, children, child_centroids, child_counts):
        self.children = list(children)
        self.child_centroids = np.ascontiguousarray(child_centroids, dtype=np.float32)
        self.child_counts = np.asarray(child_counts, dtype=np.int64)
        self.vector_count = int(self.child_counts.sum())
        self._norms = None

    def add_inner_entry(self, child_id: int, centroid: np.ndarray, count: int):
        self.children.append(child_id)
        self.child_centroids = np.concatenate(
            [self.child_centroids, centroid[None, :].astype(np.float32)]
        )
        self.child_counts = np.append(self.child_counts, np.int64(count))
        self.vector_count += count
        self._norms = None

    def replace_inner_entry(self, child_id: int, replacements):
        """Swap one (child, centroid, count) entry for the given list of them."""
        pos = self.children.index(child_id)
        new_children = self.children[:pos] + [r[0] for r in replacements] + self.children[pos + 1 :]
        new_centroids = np.concatenate(
            [
                self.child_centroids[:pos],
                np.stack([r[1] for r in replacements]).astype(np.float32),
                self.child_centroids[pos + 1 :],
            ]
        )
        new_counts = np.concatenate(
            [
                self.child_counts[:pos],
                np.asarray([r[2] for r in replacements], dtype=np.int64),
                self.child_counts[pos + 1 :],
            ]
        )
        self.set_inner_entries(new_children, new_centroids, new_counts)

    def update_child_entry(self, child_id: int, centroid: np.ndarray, count: int):
        """Refresh the stored copy of one child's key. The node's own
        vector_count is owned by the insert path and not touched here."""
        pos = self.children.index(child_id)
        self.child_centroids[pos] = centroid.astype(np.float32)
        self.child_counts[pos] = count
        self._norms = None


class VerifyReport:
    def __init__(self, violations: list[str]):
        self.violations = violations

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def first_violation(self) -> str | None:
        return self.violations[0] if self.violations else None

    def __repr__(self):
        return "VerifyReport(ok)" if self.ok else f"VerifyReport({self.first_violation!r})"


class BPlusAnnTree:
    """In-memory index tree. Starts as a single empty root leaf and grows
    wide: leaf blocks always attach at level 0 and splits push height up.

    Reads are lock-free; ``insert`` serializes mutators through a writer
    lock and applies split restructuring bottom-up so concurrent readers
    never observe a half-applied split.
    """

    def __init__(self, dim: int, params: BuildParams):
        self.dim = dim
        self.metric = params.metric
        self.kappa_leaf = params.kappa_leaf
        self.kappa_inner = params.kappa_inner
        self.nodes: dict[int, TreeNode] = {}
        self._next_id = 0
        self.version = 0
        self.edges = None
        self.id_loc: dict[int, tuple[int, int]] = {}
        self._split_rng = np.random.default_rng(params.seed)
        self._mutations: dict[int, int] = {}
        self._write_lock = threading.RLock()

        root = TreeNode(self.allocate_node_id(), LEAF, 0, np.zeros(dim, dtype=np.float32))
        root.set_leaf_entries(np.empty(0, dtype=np.int64), np.empty((0, dim), dtype=np.float32))
        self.register_node(root)
        self.root_id = root.node_id

    @classmethod
    def from_nodes(
        cls, dim: int, params: BuildParams, nodes: dict[int, TreeNode], root_id: int
    ) -> "BPlusAnnTree":
        """Reassemble a tree from deserialized nodes (parent pointers and the
        id location map are rebuilt here)."""
        tree = cls.__new__(cls)
        tree.dim = dim
        tree.metric = params.metric
        tree.kappa_leaf = params.kappa_leaf
        tree.kappa_inner = params.kappa_inner
        tree.nodes = nodes
        tree._next_id = (max(nodes) + 1) if nodes else 0
        tree.version = 0
        tree.edges = None
        tree.id_loc = {}
        tree._split_rng = np.random.default_rng(params.seed)
        tree._mutations = {}
        tree._write_lock = threading.RLock()
        tree.root_id = root_id
        for nid, node in nodes.items():
            if node.is_leaf:
                for row, vid in enumerate(node.vector_ids):
                    tree.id_loc[int(vid)] = (nid, row)
            else:
                for cid in node.children:
                    nodes[cid].parent = nid
        nodes[root_id].parent = None
        return tree

    # -- owner interface shared with the disk handle ------------------------

    def allocate_node_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def register_node(self, node: TreeNode):
        self.nodes[node.node_id] = node

    def drop_node(self, node_id: int):
        del self.nodes[node_id]
        self._mutations.pop(node_id, None)

    def set_root(self, node_id: int):
        self.root_id = node_id

    def fetch(self, node_id: int, stats=None) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise IntegrityError(f"unknown node id {node_id}")

    def release(self, node_id: int):
        pass

    def reparent(self, child_ids, parent_id):
        for cid in child_ids:
            self.nodes[cid].parent = parent_id

    def mark_dirty(self, node_id: int):
        pass

    def bump_version(self):
        self.version += 1

    @property
    def write_lock(self):
        return self._write_lock

    @property
    def split_rng(self):
        return self._split_rng

    @property
    def mutation_counters(self):
        return self._mutations

    # -- read helpers --------------------------------------------------------

    @property
    def count(self) -> int:
        return self.fetch(self.root_id).vector_count

    @property
    def height(self) -> int:
        return self.fetch(self.root_id).level + 1

    def leaf_ids(self) -> list[int]:
        return sorted(nid for nid, n in self.nodes.items() if n.is_leaf)

    def leaf_of(self, vector_id: int) -> int:
        try:
            return self.id_loc[int(vector_id)][0]
        except KeyError:
            raise UsageError(f"unknown vector id {vector_id}")

    def vectors_for(self, vector_ids, stats=None) -> np.ndarray:
        out = np.empty((len(vector_ids), self.dim), dtype=np.float32)
        for i, vid in enumerate(vector_ids):
            leaf_id, row = self.id_loc[int(vid)]
            out[i] = self.fetch(leaf_id).vectors[row]
        return out

    def all_vector_ids(self) -> np.ndarray:
        blocks = [self.fetch(l).vector_ids for l in self.leaf_ids()]
        return np.concatenate(blocks) if blocks else np.empty(0, dtype=np.int64)

    def content_equal(self, other: "BPlusAnnTree") -> bool:
        """Deep structural and bitwise content equality (used by round-trip
        verification)."""
        if (
            self.root_id != other.root_id
            or self.dim != other.dim
            or self.metric != other.metric
            or set(self.nodes) != set(other.nodes)
        ):
            return False
        for nid, a in self.nodes.items():
            b = other.nodes[nid]
            if (a.kind, a.level, a.parent) != (b.kind, b.level, b.parent):
                return False
            if not np.array_equal(a.centroid, b.centroid):
                return False
            if a.is_leaf:
                if not np.array_equal(a.vector_ids, b.vector_ids):
                    return False
                if not np.array_equal(a.vectors, b.vectors):
                    return False
            else:
                if a.children != b.children:
                    return False
                if not np.array_equal(a.child_centroids, b.child_centroids):
                    return False
                if not np.array_equal(a.child_counts, b.child_counts):
                    return False
        return True


# ---------------------------------------------------------------------------
# shared mutation machinery (owner = BPlusAnnTree or storage.DiskTree)
# ---------------------------------------------------------------------------


def _nearest_child(owner, node: TreeNode, v: np.ndarray) -> int:
    norms = node.entry_norms() if owner.metric is Metric.COSINE else None
    d = distance_one_to_many(v, node.child_centroids, owner.metric, block_norms=norms)
    order = np.lexsort((np.asarray(node.children, dtype=np.int64), d))
    return node.children[int(order[0])]


def _blend_centroid(centroid: np.ndarray, count: int, block_mean: np.ndarray, block_count: int):
    """Running weighted mean in float64, stored back as float32."""
    total = count + block_count
    c = centroid.astype(np.float64)
    bm = np.asarray(block_mean, dtype=np.float64)
    return ((c * count + bm * block_count) / total).astype(np.float32)


def _exact_centroid(node: TreeNode) -> np.ndarray:
    if node.is_leaf:
        return node.vectors.astype(np.float64).mean(axis=0).astype(np.float32)
    w = node.child_counts.astype(np.float64)
    return ((node.child_centroids.astype(np.float64) * w[:, None]).sum(axis=0) / w.sum()).astype(
        np.float32
    )


def _note_mutation(owner, node: TreeNode):
    """Periodic exact recompute bounds float drift from incremental updates."""
    counters = owner.mutation_counters
    n = counters.get(node.node_id, 0) + 1
    counters[node.node_id] = n
    if n % _RECOMPUTE_EVERY == 0 and node.entry_count:
        node.centroid = _exact_centroid(node)


def _refresh_parent_entry(owner, node: TreeNode):
    if node.parent is None:
        return
    parent = owner.fetch(node.parent)
    parent.update_child_entry(node.node_id, node.centroid, node.vector_count)
    owner.mark_dirty(parent.node_id)


def _two_means_split(owner, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partition rows of ``keys`` into two nonempty halves with 2-means.
    Falls back to index halving when the data does not separate."""
    n = len(keys)
    seed = int(owner.split_rng.integers(0, 2**63 - 1))
    clusters = kmeans_pp(
        VectorSet(keys),
        np.arange(n, dtype=np.int64),
        KMeansParams(K=2, J=8, seed=seed),
        owner.metric,
    )
    if len(clusters) == 2:
        return clusters[0][1], clusters[1][1]
    half = n // 2
    idx = np.arange(n, dtype=np.int64)
    return idx[:half], idx[half:]


def _make_leaf(owner, level, ids, vecs, edge_lists=None) -> TreeNode:
    node = TreeNode(owner.allocate_node_id(), LEAF, level, np.zeros(owner.dim, dtype=np.float32))
    node.set_leaf_entries(ids, vecs, edge_lists)
    node.centroid = _exact_centroid(node)
    owner.register_node(node)
    for row, vid in enumerate(node.vector_ids):
        owner.id_loc[int(vid)] = (node.node_id, row)
    return node


def _split(owner, node: TreeNode) -> tuple[int, int, TreeNode | None]:
    """Split one overfull node into two siblings; returns the new ids and the
    parent (None when the root split created a new one)."""
    if node.is_leaf:
        left_idx, right_idx = _two_means_split(owner, node.vectors)
        halves = []
        for idx in (left_idx, right_idx):
            idx = np.sort(idx)
            el = [node.edge_lists[i] for i in idx] if node.edge_lists is not None else None
            halves.append(_make_leaf(owner, node.level, node.vector_ids[idx], node.vectors[idx], el))
    else:
        left_idx, right_idx = _two_means_split(owner, node.child_centroids)
        halves = []
        for idx in (left_idx, right_idx):
            idx = np.sort(idx)
            half = TreeNode(
                owner.allocate_node_id(), INNER, node.level, np.zeros(owner.dim, dtype=np.float32)
            )
            half.set_inner_entries(
                [node.children[i] for i in idx],
                node.child_centroids[idx],
                node.child_counts[idx],
            )
            half.centroid = _exact_centroid(half)
            owner.register_node(half)
            owner.reparent(half.children, half.node_id)
            halves.append(half)
    left, right = halves

    parent = None
    if node.parent is None:
        parent = TreeNode(
            owner.allocate_node_id(), INNER, node.level + 1, np.zeros(owner.dim, dtype=np.float32)
        )
        parent.set_inner_entries(
            [left.node_id, right.node_id],
            np.stack([left.centroid, right.centroid]),
            [left.vector_count, right.vector_count],
        )
        parent.centroid = _exact_centroid(parent)
        owner.register_node(parent)
        owner.set_root(parent.node_id)
        owner.mark_dirty(parent.node_id)
    else:
        parent_node = owner.fetch(node.parent)
        parent_node.replace_inner_entry(
            node.node_id,
            [
                (left.node_id, left.centroid, left.vector_count),
                (right.node_id, right.centroid, right.vector_count),
            ],
        )
        owner.mark_dirty(parent_node.node_id)
    owner.reparent(
        [left.node_id, right.node_id], parent.node_id if parent is not None else node.parent
    )
    owner.mark_dirty(left.node_id)
    owner.mark_dirty(right.node_id)
    owner.drop_node(node.node_id)
    return left.node_id, right.node_id, parent


def _split_cascade(owner, node_id: int) -> int:
    """Split ``node_id`` if overfull, then walk up splitting overfull
    ancestors. Returns the number of splits performed."""
    splits = 0
    current: int | None = node_id
    while current is not None:
        node = owner.fetch(current)
        try:
            capacity = owner.kappa_leaf if node.is_leaf else owner.kappa_inner
            if node.entry_count <= capacity:
                break
            parent_before = node.parent
        finally:
            owner.release(current)
        _split(owner, node)
        splits += 1
        current = parent_before
        if current is None:
            break
    return splits


def split_node(owner, node_id: int) -> tuple[int, int]:
    """Public split: requires the node to be over capacity."""
    node = owner.fetch(node_id)
    capacity = owner.kappa_leaf if node.is_leaf else owner.kappa_inner
    if node.entry_count <= capacity:
        raise UsageError(
            f"node {node_id} has {node.entry_count} entries, within capacity {capacity}"
        )
    with owner.write_lock:
        left, right, _ = _split(owner, node)
        owner.bump_version()
    return left, right


def insert(owner, v, vector_id: int) -> InsertReport:
    """Insert one vector: nearest-centroid descent, incremental centroid
    updates along the path, then split cascade if the leaf overflows."""
    v = np.asarray(v, dtype=np.float32)
    if v.shape != (owner.dim,):
        raise UsageError(f"vector shape {v.shape} does not match index dim {owner.dim}")
    if not np.isfinite(v).all():
        raise UsageError("vector contains NaN or Inf")
    if int(vector_id) in owner.id_loc:
        raise UsageError(f"duplicate vector id {vector_id}")

    with owner.write_lock:
        node = owner.fetch(owner.root_id)
        path = [node]
        try:
            while not node.is_leaf:
                node = owner.fetch(_nearest_child(owner, node, v))
                path.append(node)
            leaf = node

            leaf.append_leaf_entry(vector_id, v)
            owner.id_loc[int(vector_id)] = (leaf.node_id, leaf.entry_count - 1)
            for n in path:
                if n.is_leaf:
                    n.centroid = (
                        v.copy()
                        if n.entry_count == 1
                        else _blend_centroid(n.centroid, n.entry_count - 1, v, 1)
                    )
                else:
                    n.centroid = _blend_centroid(n.centroid, n.vector_count, v, 1)
                    n.vector_count += 1
                owner.mark_dirty(n.node_id)
            # bottom-up: refresh each parent's stored copy, then let the
            # periodic exact recompute run against fresh copies only
            for n in reversed(path):
                _note_mutation(owner, n)
                _refresh_parent_entry(owner, n)

            if owner.edges is not None:
                owner.edges.stale_leaves.add(leaf.node_id)
        finally:
            for n in path:
                owner.release(n.node_id)
        splits = _split_cascade(owner, leaf.node_id)
        owner.bump_version()
    return InsertReport(leaf=leaf.node_id, splits=splits)


# ---------------------------------------------------------------------------
# bulk build
# ---------------------------------------------------------------------------


def _collect_units(hierarchy: ClusterNode, kappa_leaf: int):
    """DFS the cluster hierarchy, emitting (centroid, member_ids) units whose
    size fits one leaf. Subtrees at or under kappa_leaf are aggregated into a
    single unit; oversized hierarchy leaves are handed back for bisection."""
    units: list[tuple[np.ndarray, np.ndarray, bool]] = []

    def visit(node: ClusterNode):
        if node.size <= kappa_leaf:
            members = (
                node.member_ids
                if node.is_leaf
                else np.concatenate([l.member_ids for l in node.iter_leaves()])
            )
            units.append((node.centroid, members, False))
        elif node.is_leaf:
            units.append((node.centroid, node.member_ids, True))
        else:
            for child in node.children:
                visit(child)

    visit(hierarchy)
    return units


def _bisect_oversized(owner, ids: np.ndarray, vecs: np.ndarray):
    """Repeated 2-means until every block fits kappa_leaf."""
    stack = [(ids, vecs)]
    out = []
    while stack:
        bids, bvecs = stack.pop()
        if len(bids) <= owner.kappa_leaf:
            out.append((bids, bvecs))
            continue
        left_idx, right_idx = _two_means_split(owner, bvecs)
        for idx in (np.sort(left_idx), np.sort(right_idx)):
            stack.append((bids[idx], bvecs[idx]))
    return list(reversed(out))


def _insert_leaf_block(owner, leaf: TreeNode) -> None:
    """Attach a ready-made leaf at level 0 and rebalance upward."""
    root = owner.fetch(owner.root_id)
    if root.is_leaf and root.entry_count == 0:
        # replace the placeholder empty root
        owner.drop_node(root.node_id)
        owner.set_root(leaf.node_id)
        owner.reparent([leaf.node_id], None)
        owner.mark_dirty(leaf.node_id)
        return
    if root.is_leaf:
        parent = TreeNode(
            owner.allocate_node_id(), INNER, 1, np.zeros(owner.dim, dtype=np.float32)
        )
        parent.set_inner_entries(
            [root.node_id, leaf.node_id],
            np.stack([root.centroid, leaf.centroid]),
            [root.vector_count, leaf.vector_count],
        )
        parent.centroid = _exact_centroid(parent)
        owner.register_node(parent)
        owner.reparent([root.node_id, leaf.node_id], parent.node_id)
        owner.set_root(parent.node_id)
        owner.mark_dirty(root.node_id)
        owner.mark_dirty(leaf.node_id)
        owner.mark_dirty(parent.node_id)
        return

    node = root
    path = [node]
    while node.level > 1:
        node = owner.fetch(_nearest_child(owner, node, leaf.centroid))
        path.append(node)
    node.add_inner_entry(leaf.node_id, leaf.centroid, leaf.vector_count)
    owner.reparent([leaf.node_id], node.node_id)
    owner.mark_dirty(leaf.node_id)
    for n in path:
        n.centroid = _blend_centroid(
            n.centroid, n.vector_count - (leaf.vector_count if n is node else 0),
            leaf.centroid, leaf.vector_count,
        )
        if n is not node:
            n.vector_count += leaf.vector_count
        owner.mark_dirty(n.node_id)
    for n in reversed(path):
        _note_mutation(owner, n)
        _refresh_parent_entry(owner, n)
    _split_cascade(owner, node.node_id)


def build_tree(hierarchy: ClusterNode, vset: VectorSet, params: BuildParams) -> BPlusAnnTree:
    """Build the index from a cluster hierarchy by bulk block insertion."""
    leaf_totals = 0
    seen: list[np.ndarray] = []
    for leaf in hierarchy.iter_leaves():
        leaf_totals += len(leaf.member_ids)
        seen.append(leaf.member_ids)
    if leaf_totals != vset.count or not np.array_equal(
        np.sort(np.concatenate(seen)), np.sort(vset.ids)
    ):
        raise IntegrityError("hierarchy leaves do not partition the dataset ids")

    tree = BPlusAnnTree(vset.dim, params)
    for centroid, member_ids, oversized in _collect_units(hierarchy, params.kappa_leaf):
        rows = [vset.row_of(i) for i in member_ids]
        vecs = np.ascontiguousarray(vset.data[rows], dtype=np.float32)
        if oversized:
            for bids, bvecs in _bisect_oversized(tree, member_ids, vecs):
                _insert_leaf_block(tree, _make_leaf(tree, 0, bids, bvecs))
        else:
            _insert_leaf_block(tree, _make_leaf(tree, 0, member_ids, vecs))
    tree.bump_version()
    return tree


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def _relative_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a.astype(np.float64) - b.astype(np.float64))) / scale


def verify_tree(tree) -> VerifyReport:
    """Walk every node checking structural invariants: capacities, balance,
    parent linkage, stored-copy consistency, centroid/content agreement, and
    id uniqueness across leaves."""
    violations: list[str] = []
    root = tree.fetch(tree.root_id)
    if root.parent is not None:
        violations.append(f"root {tree.root_id} has a parent pointer")

    seen_ids: list[np.ndarray] = []
    leaf_levels = set()
    stack = [tree.root_id]
    while stack:
        nid = stack.pop()
        node = tree.fetch(nid)
        if node.is_leaf:
            leaf_levels.add(node.level)
            if node.entry_count > tree.kappa_leaf:
                violations.append(f"leaf {nid} holds {node.entry_count} > kappa_leaf")
            if node.vector_count != node.entry_count:
                violations.append(f"leaf {nid} vector_count does not match entries")
            if node.entry_count:
                seen_ids.append(node.vector_ids)
                err = _relative_err(node.centroid, _exact_centroid(node))
                if err > _CENTROID_RTOL:
                    violations.append(f"leaf {nid} centroid drifted {err:.2e} from its mean")
        else:
            if node.entry_count > tree.kappa_inner:
                violations.append(f"inner {nid} holds {node.entry_count} > kappa_inner")
            if node.entry_count == 0:
                violations.append(f"inner {nid} is empty")
                continue
            if int(node.child_counts.sum()) != node.vector_count:
                violations.append(f"inner {nid} vector_count does not match child counts")
            err = _relative_err(node.centroid, _exact_centroid(node))
            if err > _CENTROID_RTOL:
                violations.append(f"inner {nid} centroid drifted {err:.2e} from its content mean")
            for pos, cid in enumerate(node.children):
                child = tree.fetch(cid)
                if child.parent != nid:
                    violations.append(f"node {cid} parent pointer is not {nid}")
                if child.level != node.level - 1:
                    violations.append(f"node {cid} level {child.level} under level {node.level}")
                if not np.array_equal(node.child_centroids[pos], child.centroid):
                    violations.append(f"inner {nid} stores a stale centroid for child {cid}")
                if int(node.child_counts[pos]) != child.vector_count:
                    violations.append(f"inner {nid} stores a stale count for child {cid}")
                stack.append(cid)

    if len(leaf_levels) > 1:
        violations.append(f"leaves at multiple levels: {sorted(leaf_levels)}")
    if seen_ids:
        all_ids = np.concatenate(seen_ids)
        if len(np.unique(all_ids)) != len(all_ids):
            violations.append("duplicate vector ids across leaves")
    return VerifyReport(violations)
