"""Tree build, insertion, node splits, and the invariant sweep."""

import numpy as np
import pytest

from bplusann import (
    BPlusAnnTree,
    BuildParams,
    KMeansParams,
    Metric,
    VectorSet,
    build_tree,
    hcluster,
    insert,
    split_node,
    verify_tree,
)
from bplusann.errors import IntegrityError, UsageError

EUC = Metric.EUCLIDEAN


def build_synthetic(n, dim=8, tau=64, kappa_leaf=64, kappa_inner=8, seed=0):
    rng = np.random.default_rng(seed)
    vset = VectorSet(rng.normal(size=(n, dim)).astype(np.float32))
    hierarchy = hcluster(vset, tau, KMeansParams(K=4, seed=seed), EUC)
    params = BuildParams(kappa_leaf=kappa_leaf, kappa_inner=kappa_inner, seed=seed)
    return vset, build_tree(hierarchy, vset, params)


class TestBuild:
    def test_single_leaf_hierarchy(self):
        rng = np.random.default_rng(0)
        vset = VectorSet(rng.normal(size=(10, 4)).astype(np.float32))
        hierarchy = hcluster(vset, tau=100, params=KMeansParams(seed=0), metric=EUC)
        tree = build_tree(hierarchy, vset, BuildParams(kappa_leaf=2048, kappa_inner=1024))
        root = tree.fetch(tree.root_id)
        assert root.is_leaf
        assert sorted(root.vector_ids) == list(range(10))
        assert verify_tree(tree).ok

    def test_leaf_count_and_capacity(self):
        n, kappa_leaf = 20000, 512
        vset, tree = build_synthetic(n, tau=512, kappa_leaf=kappa_leaf, kappa_inner=64)
        leaves = [tree.fetch(l) for l in tree.leaf_ids()]
        assert len(leaves) >= int(np.ceil(n / kappa_leaf))
        assert all(l.entry_count <= kappa_leaf for l in leaves)
        assert verify_tree(tree).ok

    def test_containment(self):
        vset, tree = build_synthetic(3000, tau=100, kappa_leaf=128, kappa_inner=8)
        np.testing.assert_array_equal(np.sort(tree.all_vector_ids()), np.arange(3000))

    def test_id_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        vset = VectorSet(rng.normal(size=(50, 4)).astype(np.float32))
        hierarchy = hcluster(vset, tau=10, params=KMeansParams(seed=0), metric=EUC)
        other = VectorSet(rng.normal(size=(49, 4)).astype(np.float32))
        with pytest.raises(IntegrityError):
            build_tree(hierarchy, other, BuildParams())

    def test_paper_capacity_configuration_accepted(self):
        params = BuildParams(kappa_leaf=2048, kappa_inner=1024)
        assert (params.kappa_leaf, params.kappa_inner) == (2048, 1024)


class TestInsert:
    def test_insert_into_nonfull_leaf(self):
        vset, tree = build_synthetic(100, tau=100, kappa_leaf=256, kappa_inner=8)
        root = tree.fetch(tree.root_id)
        before = root.centroid.copy()
        v = np.full(8, 5.0, dtype=np.float32)
        report = insert(tree, v, 100)
        assert report.splits == 0
        leaf = tree.fetch(report.leaf)
        assert 100 in set(leaf.vector_ids.tolist())
        after = tree.fetch(tree.root_id).centroid
        # running mean shifts toward the inserted vector
        assert np.linalg.norm(after - v) < np.linalg.norm(before - v)
        assert verify_tree(tree).ok

    def test_duplicate_id_rejected(self):
        vset, tree = build_synthetic(50, tau=100, kappa_leaf=256, kappa_inner=8)
        with pytest.raises(UsageError):
            insert(tree, np.zeros(8, dtype=np.float32), 10)

    def test_overflow_split_follows_blobs(self):
        # one leaf filled past capacity with two separable blobs splits along them
        dim, kappa = 4, 32
        tree = BPlusAnnTree(dim, BuildParams(kappa_leaf=kappa, kappa_inner=8, seed=0))
        rng = np.random.default_rng(0)
        vectors, labels = [], {}
        for i in range(kappa + 1):
            blob = i % 2
            v = rng.normal(size=dim).astype(np.float32)
            v[0] += 100.0 * blob
            vectors.append(v)
            labels[i] = blob
        reports = [insert(tree, v, i) for i, v in enumerate(vectors)]
        assert sum(r.splits for r in reports) == 1
        leaves = [tree.fetch(l) for l in tree.leaf_ids()]
        assert len(leaves) == 2
        for leaf in leaves:
            blob_labels = {labels[int(v)] for v in leaf.vector_ids}
            assert len(blob_labels) == 1
        assert verify_tree(tree).ok

    def test_incremental_matches_bulk_id_set(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=(800, 6)).astype(np.float32)
        vset = VectorSet(data)
        hierarchy = hcluster(vset, 64, KMeansParams(K=4, seed=0), EUC)
        bulk = build_tree(hierarchy, vset, BuildParams(kappa_leaf=64, kappa_inner=8, seed=0))
        one_by_one = BPlusAnnTree(6, BuildParams(kappa_leaf=64, kappa_inner=8, seed=0))
        for i, row in enumerate(data):
            insert(one_by_one, row, i)
        assert np.array_equal(np.sort(bulk.all_vector_ids()), np.sort(one_by_one.all_vector_ids()))
        assert verify_tree(bulk).ok
        assert verify_tree(one_by_one).ok

    def test_root_split_grows_height(self):
        tree = BPlusAnnTree(2, BuildParams(kappa_leaf=4, kappa_inner=4, seed=0))
        rng = np.random.default_rng(1)
        h0 = tree.height
        for i in range(200):
            insert(tree, rng.normal(size=2).astype(np.float32), i)
        assert tree.height > h0
        assert verify_tree(tree).ok

    def test_local_adjustment(self):
        # a non-splitting insert touches only nodes on one root-leaf path
        vset, tree = build_synthetic(2000, tau=100, kappa_leaf=256, kappa_inner=8)
        snapshot = {
            nid: (node.centroid.copy(), node.vector_count)
            for nid, node in tree.nodes.items()
        }
        report = insert(tree, np.full(8, 0.1, dtype=np.float32), 2000)
        assert report.splits == 0
        changed = {
            nid
            for nid, node in tree.nodes.items()
            if nid not in snapshot
            or not np.array_equal(snapshot[nid][0], node.centroid)
            or snapshot[nid][1] != node.vector_count
        }
        # changed nodes form one root-to-leaf chain
        leaf = tree.fetch(report.leaf)
        path = {leaf.node_id}
        cur = leaf
        while cur.parent is not None:
            path.add(cur.parent)
            cur = tree.fetch(cur.parent)
        assert changed <= path


class TestSplitNode:
    def test_two_entry_forced_split(self):
        tree = BPlusAnnTree(2, BuildParams(kappa_leaf=1, kappa_inner=4, seed=0))
        insert(tree, np.array([0.0, 0.0], dtype=np.float32), 0)
        # second insert overflows capacity 1 and splits into singletons
        report = insert(tree, np.array([1.0, 1.0], dtype=np.float32), 1)
        assert report.splits == 1
        leaves = [tree.fetch(l) for l in tree.leaf_ids()]
        assert sorted(l.entry_count for l in leaves) == [1, 1]

    def test_split_requires_overflow(self):
        vset, tree = build_synthetic(100, tau=100, kappa_leaf=256, kappa_inner=8)
        with pytest.raises(UsageError):
            split_node(tree, tree.leaf_ids()[0])

    def test_split_along_blob_boundary_and_parent_entry_count(self):
        dim = 4
        tree = BPlusAnnTree(dim, BuildParams(kappa_leaf=64, kappa_inner=8, seed=0))
        rng = np.random.default_rng(3)
        for i in range(64):
            v = rng.normal(size=dim).astype(np.float32)
            v[0] += 50.0 * (i % 2)
            insert(tree, v, i)
        # manually overfill one leaf, then split it via the public operation
        leaf_id = tree.leaf_ids()[0]
        leaf = tree.fetch(leaf_id)
        extra = rng.normal(size=dim).astype(np.float32)
        leaf.append_leaf_entry(10_000, extra)
        tree.id_loc[10_000] = (leaf_id, leaf.entry_count - 1)
        parent_id = leaf.parent
        entries_before = tree.fetch(parent_id).entry_count if parent_id is not None else None
        left, right = split_node(tree, leaf_id)
        assert tree.fetch(left).entry_count >= 1
        assert tree.fetch(right).entry_count >= 1
        if parent_id is not None:
            assert tree.fetch(parent_id).entry_count == entries_before + 1


class TestVerify:
    def test_fresh_tree_ok(self):
        vset, tree = build_synthetic(1000, tau=64, kappa_leaf=64, kappa_inner=8)
        assert verify_tree(tree).ok

    def test_after_random_inserts_ok(self):
        vset, tree = build_synthetic(1000, tau=64, kappa_leaf=64, kappa_inner=8)
        rng = np.random.default_rng(5)
        for i in range(2000):
            insert(tree, rng.normal(size=8).astype(np.float32), 1000 + i)
        report = verify_tree(tree)
        assert report.ok, report.first_violation
        assert np.sort(tree.all_vector_ids()).tolist() == list(range(3000))

    def test_detects_corrupted_centroid(self):
        vset, tree = build_synthetic(500, tau=64, kappa_leaf=64, kappa_inner=8)
        leaf = tree.fetch(tree.leaf_ids()[0])
        leaf.centroid = leaf.centroid + 10.0
        report = verify_tree(tree)
        assert not report.ok
        assert "centroid" in report.first_violation
