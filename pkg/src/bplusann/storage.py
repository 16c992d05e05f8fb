"""Locality-preserving page file and the disk-resident index handle.

File layout (all integers little-endian):

    header    magic "BPAN" | u32 version=1 | u32 dim | u8 metric
              | u64 node_count | u64 root_id | u64 directory_offset
              | u64 checksum (crc32 of header-with-zero-checksum + directory)
    payload   node records in DFS preorder, each starting on a page boundary
              and spanning whole pages (parents before children, siblings
              consecutive, so sibling leaves share a contiguous byte range)
    directory one entry per node: u64 node_id | u64 offset | u64 length
              | u8 kind | u16 level

    record    u64 node_id | u8 kind | u16 level | u32 entry_count
              | centroid: dim f32
              | leaf: entry_count i64 ids, entry_count*dim f32 vectors
                inner: entry_count i64 child ids, entry_count*dim f32 centroids
              | optional leaf edge section: per vector, u32 count + count u64 ids
                (presence inferred from the directory length)

The disk handle keeps the header, directory, and all inner nodes resident;
leaves are faulted in on first touch and held in an LRU cache under a byte
cap. Dirty nodes (from inserts) are flushed before eviction; a record that
outgrows its page span is relocated to the end of the file and the directory
is rewritten on sync. Pinned (in-use) nodes are never evicted.
"""

from __future__ import annotations

import math
import os
import struct
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .core import Metric
from .edges import SkipEdgeGraph
from .errors import FormatError, IntegrityError, StorageError, UsageError
from .tree import BPlusAnnTree, BuildParams, INNER, LEAF, TreeNode, verify_tree

__all__ = [
    "DiskTree",
    "PageFile",
    "io_stats",
    "load_tree",
    "locality_report",
    "lru_maintain",
    "open_index",
    "serialize",
]

MAGIC = b"BPAN"
FORMAT_VERSION = 1
HEADER_FMT = "<4sIIBQQQQ"
HEADER_SIZE = struct.calcsize(HEADER_FMT)
DIR_ENTRY_FMT = "<QQQBH"
DIR_ENTRY_SIZE = struct.calcsize(DIR_ENTRY_FMT)
RECORD_HEADER_FMT = "<QBHI"
RECORD_HEADER_SIZE = struct.calcsize(RECORD_HEADER_FMT)

_KIND_CODES = {INNER: 0, LEAF: 1}
_KIND_NAMES = {0: INNER, 1: LEAF}

DEFAULT_PAGE_SIZE = 4096


def _align_up(n: int, page: int) -> int:
    return ((n + page - 1) // page) * page


def _record_base_length(dim: int, entry_count: int) -> int:
    return RECORD_HEADER_SIZE + dim * 4 + entry_count * 8 + entry_count * dim * 4


@dataclass(frozen=True)
class DirEntry:
    offset: int
    length: int
    kind: str
    level: int


class PageFile:
    """Parsed header + directory of an index file."""

    def __init__(self, path, page_size, dim, metric, root_id, directory, directory_offset,
                 checksum: int = 0):
        self.path = str(path)
        self.page_size = page_size
        self.dim = dim
        self.metric = metric
        self.root_id = root_id
        self.directory: dict[int, DirEntry] = directory
        self.directory_offset = directory_offset
        self.checksum = checksum

    @property
    def node_count(self) -> int:
        return len(self.directory)

    @classmethod
    def read(cls, path) -> "PageFile":
        try:
            with open(path, "rb") as fh:
                head = fh.read(HEADER_SIZE)
                if len(head) < HEADER_SIZE:
                    raise IntegrityError(f"{path}: truncated header")
                magic, version, dim, metric_code, node_count, root_id, dir_offset, checksum = (
                    struct.unpack(HEADER_FMT, head)
                )
                if magic != MAGIC:
                    raise FormatError(f"{path}: bad magic {magic!r}")
                if version != FORMAT_VERSION:
                    raise FormatError(f"{path}: unsupported format version {version}")
                fh.seek(dir_offset)
                dir_blob = fh.read(node_count * DIR_ENTRY_SIZE)
                if len(dir_blob) < node_count * DIR_ENTRY_SIZE:
                    raise IntegrityError(f"{path}: truncated directory")
                zeroed = head[: HEADER_SIZE - 8] + b"\x00" * 8
                if zlib.crc32(zeroed + dir_blob) != checksum:
                    raise IntegrityError(f"{path}: header/directory checksum mismatch")
                file_size = os.fstat(fh.fileno()).st_size
        except OSError as exc:
            raise StorageError(f"cannot read index file {path}: {exc}")

        directory: dict[int, DirEntry] = {}
        for i in range(node_count):
            nid, offset, length, kind_code, level = struct.unpack_from(
                DIR_ENTRY_FMT, dir_blob, i * DIR_ENTRY_SIZE
            )
            if kind_code not in _KIND_NAMES:
                raise IntegrityError(f"{path}: unknown node kind {kind_code}")
            if offset + length > file_size and offset + length > dir_offset:
                raise IntegrityError(f"{path}: record for node {nid} extends past end of file")
            directory[int(nid)] = DirEntry(int(offset), int(length), _KIND_NAMES[kind_code], level)
        if root_id not in directory:
            raise IntegrityError(f"{path}: root node {root_id} missing from directory")
        offsets = [e.offset for e in directory.values()]
        page_size = 0
        for off in offsets:
            page_size = math.gcd(page_size, off)
        return cls(path, page_size or DEFAULT_PAGE_SIZE, dim, Metric.from_code(metric_code),
                   int(root_id), directory, int(dir_offset), checksum=int(checksum))


def _encode_record(node: TreeNode, dim: int, adjacency=None) -> bytes:
    parts = [
        struct.pack(
            RECORD_HEADER_FMT, node.node_id, _KIND_CODES[node.kind], node.level, node.entry_count
        ),
        np.ascontiguousarray(node.centroid, dtype="<f4").tobytes(),
    ]
    if node.is_leaf:
        parts.append(np.ascontiguousarray(node.vector_ids, dtype="<i8").tobytes())
        parts.append(np.ascontiguousarray(node.vectors, dtype="<f4").tobytes())
        edge_lists = None
        if adjacency is not None:
            edge_lists = [adjacency.get(int(v), _EMPTY) for v in node.vector_ids]
        elif node.edge_lists is not None:
            edge_lists = node.edge_lists
        if edge_lists is not None:
            for nbrs in edge_lists:
                parts.append(struct.pack("<I", len(nbrs)))
                parts.append(np.ascontiguousarray(nbrs, dtype="<i8").tobytes())
    else:
        parts.append(np.ascontiguousarray(node.children, dtype="<i8").tobytes())
        parts.append(np.ascontiguousarray(node.child_centroids, dtype="<f4").tobytes())
    return b"".join(parts)


_EMPTY = np.empty(0, dtype=np.int64)


def _decode_record(buf: bytes, dim: int, expected_id: int | None = None) -> TreeNode:
    if len(buf) < RECORD_HEADER_SIZE:
        raise IntegrityError("truncated node record")
    node_id, kind_code, level, entry_count = struct.unpack_from(RECORD_HEADER_FMT, buf, 0)
    if expected_id is not None and node_id != expected_id:
        raise IntegrityError(f"record id {node_id} does not match directory id {expected_id}")
    base = _record_base_length(dim, entry_count)
    if len(buf) < base:
        raise IntegrityError(f"node {node_id}: record shorter than its entry count implies")
    kind = _KIND_NAMES[kind_code]
    pos = RECORD_HEADER_SIZE
    centroid = np.frombuffer(buf, dtype="<f4", count=dim, offset=pos).copy()
    pos += dim * 4
    ids = np.frombuffer(buf, dtype="<i8", count=entry_count, offset=pos).copy()
    pos += entry_count * 8
    block = (
        np.frombuffer(buf, dtype="<f4", count=entry_count * dim, offset=pos)
        .reshape(entry_count, dim)
        .copy()
    )
    pos += entry_count * dim * 4

    node = TreeNode(int(node_id), kind, int(level), centroid)
    if kind == LEAF:
        edge_lists = None
        if len(buf) > base:
            edge_lists = []
            for _ in range(entry_count):
                (count,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                nbrs = np.frombuffer(buf, dtype="<i8", count=count, offset=pos).copy()
                pos += count * 8
                edge_lists.append(nbrs)
        node.set_leaf_entries(ids, block, edge_lists)
    else:
        node.set_inner_entries([int(c) for c in ids], block, np.zeros(entry_count, dtype=np.int64))
    return node


def _dfs_order(tree) -> list[int]:
    order = []
    stack = [tree.root_id]
    while stack:
        nid = stack.pop()
        order.append(nid)
        node = tree.fetch(nid)
        if not node.is_leaf:
            stack.extend(reversed(node.children))
    return order


def serialize(tree, edges=None, path=None, page_size: int = DEFAULT_PAGE_SIZE) -> PageFile:
    """Write the tree (and optional skip edges) as a page file: header,
    records in DFS preorder on page boundaries, directory, fsync."""
    if path is None:
        raise UsageError("serialize needs a destination path")
    if page_size < HEADER_SIZE or page_size & (page_size - 1):
        raise UsageError(f"page_size must be a power of two >= {HEADER_SIZE}")
    report = verify_tree(tree)
    if not report.ok:
        raise IntegrityError(f"refusing to serialize a corrupt tree: {report.first_violation}")

    adjacency = edges.adjacency if edges is not None else None
    directory: dict[int, DirEntry] = {}
    chunks: list[bytes] = []
    offset = page_size  # first page boundary after the header
    for nid in _dfs_order(tree):
        node = tree.fetch(nid)
        record = _encode_record(node, tree.dim, adjacency)
        directory[nid] = DirEntry(offset, len(record), node.kind, node.level)
        span = _align_up(len(record), page_size)
        chunks.append(record + b"\x00" * (span - len(record)))
        offset += span
    dir_offset = offset

    dir_blob = b"".join(
        struct.pack(
            DIR_ENTRY_FMT, nid, e.offset, e.length, _KIND_CODES[e.kind], e.level
        )
        for nid, e in sorted(directory.items())
    )
    bare_header = struct.pack(
        HEADER_FMT,
        MAGIC,
        FORMAT_VERSION,
        tree.dim,
        tree.metric.code,
        len(directory),
        tree.root_id,
        dir_offset,
        0,
    )
    checksum = zlib.crc32(bare_header + dir_blob)
    header = bare_header[:-8] + struct.pack("<Q", checksum)

    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(b"\x00" * (page_size - HEADER_SIZE))
            for chunk in chunks:
                fh.write(chunk)
            fh.write(dir_blob)
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise StorageError(f"writing index file {path} failed at offset {offset}: {exc}")
    return PageFile(path, page_size, tree.dim, tree.metric, tree.root_id, directory, dir_offset,
                    checksum=checksum)


def _rebuild_counts(nodes: dict[int, TreeNode], root_id: int) -> None:
    """Inner child counts are not persisted; rebuild them bottom-up from the
    leaf entry counts (iterative to dodge recursion limits on tall trees)."""
    order: list[int] = []
    stack = [root_id]
    while stack:
        nid = stack.pop()
        order.append(nid)
        node = nodes[nid]
        if not node.is_leaf:
            stack.extend(node.children)
    for nid in reversed(order):
        node = nodes[nid]
        if not node.is_leaf:
            counts = [nodes[c].vector_count for c in node.children]
            node.child_counts = np.asarray(counts, dtype=np.int64)
            node.vector_count = int(sum(counts))


def load_tree(path, kappa_leaf: int = 2048, kappa_inner: int = 1024, seed: int = 0):
    """Fully deserialize an index file into an in-memory tree (plus the skip
    edge graph when the file carries edge sections)."""
    pf = PageFile.read(path)
    nodes: dict[int, TreeNode] = {}
    adjacency: dict[int, np.ndarray] = {}
    has_edges = False
    try:
        with open(path, "rb") as fh:
            for nid, entry in pf.directory.items():
                fh.seek(entry.offset)
                buf = fh.read(entry.length)
                if len(buf) < entry.length:
                    raise IntegrityError(f"{path}: truncated record for node {nid}")
                node = _decode_record(buf, pf.dim, expected_id=nid)
                nodes[nid] = node
                if node.is_leaf and node.edge_lists is not None:
                    has_edges = True
                    for vid, nbrs in zip(node.vector_ids, node.edge_lists):
                        adjacency[int(vid)] = nbrs
    except OSError as exc:
        raise StorageError(f"reading index file {path} failed: {exc}")

    _rebuild_counts(nodes, pf.root_id)
    params = BuildParams(
        kappa_leaf=kappa_leaf, kappa_inner=kappa_inner, metric=pf.metric, seed=seed
    )
    tree = BPlusAnnTree.from_nodes(pf.dim, params, nodes, pf.root_id)
    graph = None
    if has_edges:
        max_degree = max((len(v) for v in adjacency.values()), default=1)
        graph = SkipEdgeGraph(
            adjacency=adjacency, d_edge=max(1, max_degree), s_leaf=0, built_over=tree.version
        )
        tree.edges = graph
    return tree, graph


# ---------------------------------------------------------------------------
# disk-resident handle
# ---------------------------------------------------------------------------


class _CacheEntry:
    __slots__ = ("node", "nbytes", "pins", "dirty")

    def __init__(self, node: TreeNode, nbytes: int, dirty: bool = False):
        self.node = node
        self.nbytes = nbytes
        self.pins = 0
        self.dirty = dirty


class _LazyDiskEdges:
    """Skip-edge adjacency served from the leaf records through the cache."""

    def __init__(self, handle: "DiskTree"):
        self._handle = handle
        self.stale_leaves: set[int] = set()

    def neighbors(self, vector_id: int, stats=None) -> np.ndarray:
        handle = self._handle
        loc = handle.id_loc.get(int(vector_id))
        if loc is None:
            return _EMPTY
        leaf_id, row = loc
        if stats is not None:
            stats.nodes_visited += 1
        node = handle.fetch(leaf_id, stats)
        try:
            if node.edge_lists is None:
                return _EMPTY
            return node.edge_lists[row]
        finally:
            handle.release(leaf_id)


class DiskTree:
    """Search/insert handle over a page file with bounded memory.

    Inner nodes stay resident; leaves go through an LRU cache capped at
    ``cache_capacity_bytes`` (None means unbounded). Capacities for the
    insert path are not part of the file format and are supplied here.
    """

    def __init__(
        self,
        path,
        cache_capacity_bytes: int | None = None,
        kappa_leaf: int = 2048,
        kappa_inner: int = 1024,
        seed: int = 0,
        background_maintenance: bool = False,
    ):
        self.pagefile = PageFile.read(path)
        self.path = str(path)
        self.dim = self.pagefile.dim
        self.metric = self.pagefile.metric
        self.root_id = self.pagefile.root_id
        self.kappa_leaf = kappa_leaf
        self.kappa_inner = kappa_inner
        self.capacity_bytes = math.inf if cache_capacity_bytes is None else cache_capacity_bytes
        self.version = 0

        self.directory = dict(self.pagefile.directory)
        self._page_size = self.pagefile.page_size
        try:
            self._fh = open(path, "r+b")
            self._file_end = os.fstat(self._fh.fileno()).st_size
        except OSError as exc:
            raise StorageError(f"cannot open index file {path}: {exc}")

        self._lock = threading.RLock()
        self._write_lock = threading.RLock()
        self._inner: dict[int, TreeNode] = {}
        self._cache: OrderedDict[int, _CacheEntry] = OrderedDict()
        self._dirty_inner: set[int] = set()
        self._parents: dict[int, int | None] = {}
        self.id_loc: dict[int, tuple[int, int]] = {}
        self._mutations: dict[int, int] = {}
        self._split_rng = np.random.default_rng(seed)
        self._meta_dirty = False
        self._next_id = (max(self.directory) + 1) if self.directory else 0

        self.bytes_used = 0
        self.disk_reads = 0
        self.cache_hits = 0
        self.evictions = 0

        self._load_inner_nodes()
        has_edges = self._scan_leaves()
        self.edges = _LazyDiskEdges(self) if has_edges else None

        self._maint_stop = threading.Event()
        self._maint_thread = None
        if background_maintenance:
            self.start_maintenance()

    # -- bootstrap -----------------------------------------------------------

    def _read_record(self, entry: DirEntry) -> bytes:
        try:
            self._fh.seek(entry.offset)
            buf = self._fh.read(entry.length)
        except OSError as exc:
            raise StorageError(
                f"reading {self.path} at offset {entry.offset} failed: {exc}"
            )
        if len(buf) < entry.length:
            raise IntegrityError(f"{self.path}: truncated record at offset {entry.offset}")
        return buf

    def _load_inner_nodes(self):
        for nid, entry in self.directory.items():
            if entry.kind == INNER:
                node = _decode_record(self._read_record(entry), self.dim, expected_id=nid)
                self._inner[nid] = node
        for nid, node in self._inner.items():
            for cid in node.children:
                self._parents[cid] = nid
        self._parents.setdefault(self.root_id, None)
        for nid, node in self._inner.items():
            node.parent = self._parents.get(nid)

    def _scan_leaves(self) -> bool:
        """One cheap pass over the leaf records: id -> (leaf, row) map, leaf
        entry counts for the inner child-count rebuild, edge-section flag."""
        has_edges = False
        leaf_counts: dict[int, int] = {}
        for nid, entry in sorted(self.directory.items(), key=lambda kv: kv[1].offset):
            if entry.kind != LEAF:
                continue
            try:
                self._fh.seek(entry.offset)
                head = self._fh.read(RECORD_HEADER_SIZE)
                if len(head) < RECORD_HEADER_SIZE:
                    raise IntegrityError(f"{self.path}: truncated record for node {nid}")
                rec_id, _, _, entry_count = struct.unpack(RECORD_HEADER_FMT, head)
                if rec_id != nid:
                    raise IntegrityError(
                        f"{self.path}: record id {rec_id} does not match directory id {nid}"
                    )
                self._fh.seek(entry.offset + RECORD_HEADER_SIZE + self.dim * 4)
                ids = np.frombuffer(self._fh.read(entry_count * 8), dtype="<i8")
            except OSError as exc:
                raise StorageError(f"reading {self.path} at {entry.offset} failed: {exc}")
            if len(ids) < entry_count:
                raise IntegrityError(f"{self.path}: truncated id block for node {nid}")
            leaf_counts[nid] = int(entry_count)
            for row, vid in enumerate(ids):
                self.id_loc[int(vid)] = (nid, row)
            if entry.length > _record_base_length(self.dim, entry_count):
                has_edges = True

        # rebuild inner vector counts bottom-up
        combined: dict[int, TreeNode] = dict(self._inner)
        for nid, count in leaf_counts.items():
            stub = TreeNode(nid, LEAF, 0, np.zeros(1, dtype=np.float32))
            stub.vector_count = count
            combined[nid] = stub
        if self.directory:
            _rebuild_counts(combined, self.root_id)
        return has_edges

    # -- owner interface (shared with tree.insert / split machinery) ---------

    @property
    def write_lock(self):
        return self._write_lock

    @property
    def split_rng(self):
        return self._split_rng

    @property
    def mutation_counters(self):
        return self._mutations

    def allocate_node_id(self) -> int:
        with self._lock:
            nid = self._next_id
            self._next_id += 1
            return nid

    def register_node(self, node: TreeNode):
        with self._lock:
            self.directory[node.node_id] = DirEntry(-1, 0, node.kind, node.level)
            self._parents.setdefault(node.node_id, None)
            if node.is_leaf:
                if self.edges is not None and node.edge_lists is None:
                    node.edge_lists = [_EMPTY] * node.entry_count
                nbytes = len(_encode_record(node, self.dim))
                self._cache[node.node_id] = _CacheEntry(node, nbytes, dirty=True)
                self._cache.move_to_end(node.node_id)
                self.bytes_used += nbytes
                self._maintain_locked()
            else:
                self._inner[node.node_id] = node
                self._dirty_inner.add(node.node_id)
            self._meta_dirty = True

    def drop_node(self, node_id: int):
        with self._lock:
            self.directory.pop(node_id, None)
            self._parents.pop(node_id, None)
            self._mutations.pop(node_id, None)
            self._dirty_inner.discard(node_id)
            self._inner.pop(node_id, None)
            entry = self._cache.pop(node_id, None)
            if entry is not None:
                self.bytes_used -= entry.nbytes
            self._meta_dirty = True

    def set_root(self, node_id: int):
        self.root_id = node_id
        self._parents[node_id] = None
        self._meta_dirty = True

    def reparent(self, child_ids, parent_id):
        with self._lock:
            for cid in child_ids:
                self._parents[cid] = parent_id
                if cid in self._inner:
                    self._inner[cid].parent = parent_id
                elif cid in self._cache:
                    self._cache[cid].node.parent = parent_id

    def mark_dirty(self, node_id: int):
        with self._lock:
            if node_id in self._inner:
                self._dirty_inner.add(node_id)
                return
            entry = self._cache.get(node_id)
            if entry is not None:
                entry.dirty = True
                self.bytes_used -= entry.nbytes
                entry.nbytes = len(_encode_record(entry.node, self.dim))
                self.bytes_used += entry.nbytes

    def bump_version(self):
        self.version += 1
        self._meta_dirty = True

    def fetch(self, node_id: int, stats=None) -> TreeNode:
        with self._lock:
            node = self._inner.get(node_id)
            if node is not None:
                self.cache_hits += 1
                if stats is not None:
                    stats.cache_hits += 1
                return node
            entry = self._cache.get(node_id)
            if entry is not None:
                self._cache.move_to_end(node_id)
                entry.pins += 1
                self.cache_hits += 1
                if stats is not None:
                    stats.cache_hits += 1
                return entry.node
            dir_entry = self.directory.get(node_id)
            if dir_entry is None:
                raise IntegrityError(f"unknown node id {node_id}")
            buf = self._read_record(dir_entry)
            node = _decode_record(buf, self.dim, expected_id=node_id)
            node.parent = self._parents.get(node_id)
            entry = _CacheEntry(node, len(buf))
            entry.pins = 1
            self._cache[node_id] = entry
            self.bytes_used += entry.nbytes
            self.disk_reads += 1
            if stats is not None:
                stats.disk_reads += 1
            self._maintain_locked()
            return node

    def release(self, node_id: int):
        with self._lock:
            entry = self._cache.get(node_id)
            if entry is not None and entry.pins > 0:
                entry.pins -= 1

    # -- read helpers ---------------------------------------------------------

    @property
    def count(self) -> int:
        node = self.fetch(self.root_id)
        try:
            return node.vector_count
        finally:
            self.release(self.root_id)

    @property
    def height(self) -> int:
        return self.directory[self.root_id].level + 1

    def leaf_ids(self) -> list[int]:
        return sorted(nid for nid, e in self.directory.items() if e.kind == LEAF)

    def leaf_of(self, vector_id: int) -> int:
        try:
            return self.id_loc[int(vector_id)][0]
        except KeyError:
            raise UsageError(f"unknown vector id {vector_id}")

    def vectors_for(self, vector_ids, stats=None) -> np.ndarray:
        """Gather vectors by id, grouped by leaf so each leaf is faulted at
        most once per call. Counts toward the query's node-access stats."""
        out = np.empty((len(vector_ids), self.dim), dtype=np.float32)
        by_leaf: dict[int, list[int]] = {}
        for i, vid in enumerate(vector_ids):
            loc = self.id_loc.get(int(vid))
            if loc is None:
                raise UsageError(f"unknown vector id {vid}")
            by_leaf.setdefault(loc[0], []).append(i)
        for leaf_id, positions in by_leaf.items():
            if stats is not None:
                stats.nodes_visited += 1
            node = self.fetch(leaf_id, stats)
            try:
                for i in positions:
                    out[i] = node.vectors[self.id_loc[int(vector_ids[i])][1]]
            finally:
                self.release(leaf_id)
        return out

    def io_stats(self) -> dict:
        with self._lock:
            return {
                "disk_reads": self.disk_reads,
                "cache_hits": self.cache_hits,
                "bytes_used": self.bytes_used,
                "evictions": self.evictions,
            }

    # -- write-back and eviction ----------------------------------------------

    def _flush_node_locked(self, node_id: int, node: TreeNode):
        record = _encode_record(node, self.dim)
        entry = self.directory[node_id]
        span = _align_up(entry.length, self._page_size) if entry.offset >= 0 else 0
        if entry.offset >= 0 and _align_up(len(record), self._page_size) <= span:
            offset = entry.offset
        else:
            offset = _align_up(self._file_end, self._page_size)
        try:
            self._fh.seek(offset)
            padded = record + b"\x00" * (_align_up(len(record), self._page_size) - len(record))
            self._fh.write(padded)
            self._fh.flush()
        except OSError as exc:
            raise StorageError(f"flushing node {node_id} to {self.path}@{offset} failed: {exc}")
        self._file_end = max(self._file_end, offset + _align_up(len(record), self._page_size))
        self.directory[node_id] = DirEntry(offset, len(record), node.kind, node.level)
        self._meta_dirty = True

    def _maintain_locked(self):
        while self.bytes_used > self.capacity_bytes:
            victim = None
            for nid, entry in self._cache.items():
                if entry.pins == 0:
                    victim = nid
                    break
            if victim is None:
                break
            entry = self._cache[victim]
            if entry.dirty:
                self._flush_node_locked(victim, entry.node)
            del self._cache[victim]
            self.bytes_used -= entry.nbytes
            self.evictions += 1

    def lru_maintain(self) -> dict:
        """One maintenance cycle: evict LRU unpinned nodes (flushing dirty
        ones) until the cache fits the cap. Safe to call from a background
        thread; everything is guarded by the cache lock."""
        with self._lock:
            before = self.evictions
            self._maintain_locked()
            return {"evictions": self.evictions - before, "bytes_used": self.bytes_used}

    def start_maintenance(self, interval: float = 0.02):
        if self._maint_thread is not None:
            return
        self._maint_stop.clear()

        def loop():
            while not self._maint_stop.wait(interval):
                self.lru_maintain()

        self._maint_thread = threading.Thread(target=loop, daemon=True)
        self._maint_thread.start()

    def stop_maintenance(self):
        if self._maint_thread is not None:
            self._maint_stop.set()
            self._maint_thread.join()
            self._maint_thread = None

    def sync(self):
        """Flush every dirty node plus the header and directory."""
        with self._lock:
            for nid in sorted(self._dirty_inner):
                self._flush_node_locked(nid, self._inner[nid])
            self._dirty_inner.clear()
            for nid, entry in self._cache.items():
                if entry.dirty:
                    self._flush_node_locked(nid, entry.node)
                    entry.dirty = False
            if self._meta_dirty:
                self._flush_meta_locked()

    def _flush_meta_locked(self):
        dir_offset = _align_up(self._file_end, self._page_size)
        dir_blob = b"".join(
            struct.pack(DIR_ENTRY_FMT, nid, e.offset, e.length, _KIND_CODES[e.kind], e.level)
            for nid, e in sorted(self.directory.items())
        )
        bare_header = struct.pack(
            HEADER_FMT,
            MAGIC,
            FORMAT_VERSION,
            self.dim,
            self.metric.code,
            len(self.directory),
            self.root_id,
            dir_offset,
            0,
        )
        checksum = zlib.crc32(bare_header + dir_blob)
        header = bare_header[:-8] + struct.pack("<Q", checksum)
        try:
            self._fh.seek(dir_offset)
            self._fh.write(dir_blob)
            self._fh.seek(0)
            self._fh.write(header)
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            raise StorageError(f"flushing metadata to {self.path} failed: {exc}")
        self._file_end = max(self._file_end, dir_offset + len(dir_blob))
        self._meta_dirty = False

    def close(self):
        self.stop_maintenance()
        try:
            self.sync()
        finally:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_index(path, cache_capacity_bytes: int | None = None, **kwargs) -> DiskTree:
    """Open a page file as a disk-resident search handle: header, directory,
    and inner nodes come into memory; leaves are faulted in on first touch."""
    return DiskTree(path, cache_capacity_bytes, **kwargs)


def fetch_node(handle: DiskTree, node_id: int, stats=None) -> TreeNode:
    return handle.fetch(node_id, stats)


def lru_maintain(handle: DiskTree) -> dict:
    return handle.lru_maintain()


def io_stats(handle: DiskTree) -> dict:
    return handle.io_stats()


def locality_report(path) -> dict:
    """Directory-derived layout check: fraction of leaf-parents whose leaf
    children sit at consecutive payload offsets, plus offset alignment."""
    pf = PageFile.read(path)
    inner_children: dict[int, list[int]] = {}
    try:
        with open(path, "rb") as fh:
            for nid, entry in pf.directory.items():
                if entry.kind != INNER:
                    continue
                fh.seek(entry.offset)
                buf = fh.read(entry.length)
                node = _decode_record(buf, pf.dim, expected_id=nid)
                inner_children[nid] = list(node.children)
    except OSError as exc:
        raise StorageError(f"reading index file {path} failed: {exc}")

    leaf_offsets = sorted(
        (e.offset, nid) for nid, e in pf.directory.items() if e.kind == LEAF
    )
    rank = {nid: i for i, (_, nid) in enumerate(leaf_offsets)}
    total = consecutive = 0
    for nid, children in inner_children.items():
        ranks = sorted(rank[c] for c in children if c in rank)
        if len(ranks) != len(children):
            continue  # parent of inner nodes
        total += 1
        if ranks == list(range(ranks[0], ranks[0] + len(ranks))):
            consecutive += 1
    aligned = all(e.offset % pf.page_size == 0 for e in pf.directory.values())
    return {
        "leaf_parents": total,
        "consecutive_parents": consecutive,
        "fraction_consecutive": (consecutive / total) if total else 1.0,
        "offsets_aligned": aligned,
        "page_size": pf.page_size,
    }
