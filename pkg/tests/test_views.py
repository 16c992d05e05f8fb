"""View extraction, view-scoped search, and stream serving with survival."""

import numpy as np
import pytest

from bplusann import (
    EdgeParams,
    Metric,
    OracleRecallPolicy,
    RadiusPolicy,
    SearchParams,
    VectorSet,
    brute_force_knn,
    create_view,
    search,
    search_dissimilar,
    serve_stream,
    view_search,
)
from bplusann.cli import temporal_sort
from bplusann.errors import UsageError

from helpers import clustered_data, exhaustive_beta, make_indexed

EUC = Metric.EUCLIDEAN


def two_blob_index(n_per=400, dim=6, separation=60.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per, dim)).astype(np.float32)
    b = rng.normal(size=(n_per, dim)).astype(np.float32)
    b[:, 0] += separation
    data = np.concatenate([a, b])
    vset, tree, graph = make_indexed(
        2 * n_per, dim=dim, data=data, tau=50, kappa_leaf=50, kappa_inner=8,
        d_edge=6, s_leaf=3, seed=seed,
    )
    return data, vset, tree


EDGES = EdgeParams(d_edge=6, s_leaf=3)


class TestCreateView:
    def test_total_view_covers_all_leaves(self):
        vset, tree, _ = make_indexed(600, tau=50, kappa_leaf=50, kappa_inner=8,
                                     d_edge=6, s_leaf=3)
        q = np.zeros(8, dtype=np.float32)
        view = create_view(tree, q, k_view=600, edge_params=EDGES,
                           beta=exhaustive_beta(tree))
        assert sorted(view.leaf_ids) == tree.leaf_ids()
        assert view.subtree.count == 600

    def test_kview_one_is_single_leaf(self):
        vset, tree, _ = make_indexed(600, tau=50, kappa_leaf=50, kappa_inner=8,
                                     d_edge=6, s_leaf=3)
        q = vset.data[123]
        view = create_view(tree, q, k_view=1, edge_params=EDGES,
                           beta=exhaustive_beta(tree))
        nn = brute_force_knn(vset, q, 1, EUC)[0]
        assert view.leaf_ids == [tree.leaf_of(nn.id)]

    def test_blob_scoped_view(self):
        data, vset, tree = two_blob_index()
        seed_q = data[5]  # blob A
        view = create_view(tree, seed_q, k_view=100, edge_params=EDGES, beta=16)
        for leaf in view.leaf_ids:
            members = view.subtree.fetch(leaf).vector_ids
            assert all(int(m) < 400 for m in members)  # blob A ids only

    def test_view_is_closed_over_base_ids(self):
        vset, tree, _ = make_indexed(500, tau=50, kappa_leaf=50, kappa_inner=8,
                                     d_edge=6, s_leaf=3)
        view = create_view(tree, vset.data[0], k_view=50, edge_params=EDGES, beta=8)
        base_ids = set(range(500))
        for leaf in view.leaf_ids:
            assert set(view.subtree.fetch(leaf).vector_ids.tolist()) <= base_ids
        for vid, nbrs in view.edges.adjacency.items():
            assert view.contains(vid)
            assert all(view.contains(u) for u in nbrs)

    def test_kview_bounds(self):
        vset, tree, _ = make_indexed(100, with_edges=False)
        with pytest.raises(UsageError):
            create_view(tree, vset.data[0], k_view=101, edge_params=EDGES)
        with pytest.raises(UsageError):
            create_view(tree, vset.data[0], k_view=0, edge_params=EDGES)

    def test_base_tree_untouched(self):
        vset, tree, _ = make_indexed(500, tau=50, kappa_leaf=50, kappa_inner=8,
                                     d_edge=6, s_leaf=3)
        version_before = tree.version
        snapshot = {nid: tree.fetch(nid).centroid.copy() for nid in tree.nodes}
        view = create_view(tree, vset.data[0], k_view=50, edge_params=EDGES, beta=8)
        view_search(view, vset.data[1], SearchParams(k=5, beta=4, d_edge=6))
        assert tree.version == version_before
        for nid, centroid in snapshot.items():
            np.testing.assert_array_equal(tree.fetch(nid).centroid, centroid)


class TestViewSearch:
    def test_seed_fidelity(self):
        vset, tree, _ = make_indexed(800, tau=50, kappa_leaf=50, kappa_inner=8,
                                     d_edge=6, s_leaf=3)
        q = vset.data[42]
        view = create_view(tree, q, k_view=60, edge_params=EDGES,
                           beta=exhaustive_beta(tree))
        base, _ = search(tree, q, SearchParams(k=10, beta=exhaustive_beta(tree), d_edge=6))
        got, in_view = view_search(
            view, q, SearchParams(k=10, beta=exhaustive_beta(view.subtree), d_edge=6)
        )
        assert [n.id for n in got] == [n.id for n in base]
        assert in_view

    def test_far_query_exhausts_view(self):
        data, vset, tree = two_blob_index()
        view = create_view(tree, data[0], k_view=100, edge_params=EDGES, beta=16)
        far_q = data[500]  # opposite blob
        _, in_view = view_search(view, far_q, SearchParams(k=5, beta=8, d_edge=6),
                                 policy=RadiusPolicy(2.0))
        assert not in_view
        _, in_view_oracle = view_search(view, far_q, SearchParams(k=5, beta=8, d_edge=6),
                                        policy=OracleRecallPolicy(vset))
        assert not in_view_oracle

    def test_results_stay_inside_view(self):
        vset, tree, _ = make_indexed(800, tau=50, kappa_leaf=50, kappa_inner=8,
                                     d_edge=6, s_leaf=3)
        view = create_view(tree, vset.data[7], k_view=80, edge_params=EDGES, beta=8)
        rng = np.random.default_rng(3)
        for _ in range(10):
            q = rng.normal(size=8).astype(np.float32)
            got, _ = view_search(view, q, SearchParams(k=10, beta=8, d_edge=6))
            assert all(view.contains(n.id) for n in got)

    def test_scoped_dissimilarity_stays_in_context(self):
        data, vset, tree = two_blob_index()
        view = create_view(tree, data[0], k_view=150, edge_params=EDGES, beta=16)
        got, _ = search_dissimilar(
            tree, data[0],
            SearchParams(k=10, beta=exhaustive_beta(view.subtree), dissimilar=True, d_edge=6),
            scope=view,
        )
        assert got
        assert all(view.contains(n.id) for n in got)
        assert all(int(n.id) < 400 for n in got)  # never leaves blob A's context


def correlated_stream(data, n_queries, seed=0, scale=0.05):
    """Queries perturbed off data points, then chained nearest-to-nearest."""
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(data), size=n_queries, replace=False)
    queries = data[picks] + rng.normal(scale=scale, size=(n_queries, data.shape[1])).astype(
        np.float32
    )
    order = temporal_sort(queries.astype(np.float32), EUC)
    return queries[order].astype(np.float32)


class TestServeStream:
    def test_constant_stream_uses_one_view(self):
        vset, tree, _ = make_indexed(600, tau=50, kappa_leaf=50, kappa_inner=8,
                                     d_edge=6, s_leaf=3)
        queries = np.tile(vset.data[3], (25, 1))
        results, survival = serve_stream(
            tree, queries, k=5, k_view=60, policy=OracleRecallPolicy(vset),
            edge_params=EDGES, beta=8,
        )
        assert len(results) == 25
        assert len(survival) == 1
        assert survival[0]["queries_served"] == 25
        assert survival[0]["mean_recall"] > 0

    def test_sorted_stream_outlives_shuffled(self):
        data = clustered_data(4000, dim=6, centers=10, scale=30.0, seed=2)
        vset, tree, _ = make_indexed(4000, dim=6, data=data, tau=64, kappa_leaf=64,
                                     kappa_inner=8, d_edge=6, s_leaf=3, seed=2)
        sorted_q = correlated_stream(data, 150, seed=3)
        shuffled_q = sorted_q[np.random.default_rng(4).permutation(len(sorted_q))]
        policy = OracleRecallPolicy(vset)
        _, surv_sorted = serve_stream(tree, sorted_q, k=5, k_view=300, policy=policy,
                                      edge_params=EDGES, beta=12)
        _, surv_shuffled = serve_stream(tree, shuffled_q, k=5, k_view=300, policy=policy,
                                        edge_params=EDGES, beta=12)
        mean_sorted = np.mean([r["queries_served"] for r in surv_sorted])
        mean_shuffled = np.mean([r["queries_served"] for r in surv_shuffled])
        assert mean_sorted > mean_shuffled

    def test_survival_monotone_in_kview(self):
        data = clustered_data(4000, dim=6, centers=10, scale=30.0, seed=5)
        vset, tree, _ = make_indexed(4000, dim=6, data=data, tau=64, kappa_leaf=64,
                                     kappa_inner=8, d_edge=6, s_leaf=3, seed=5)
        stream = correlated_stream(data, 120, seed=6)
        policy = OracleRecallPolicy(vset)
        survivals = {}
        for k_view in (50, 400):
            _, surv = serve_stream(tree, stream, k=5, k_view=k_view, policy=policy,
                                   edge_params=EDGES, beta=12)
            survivals[k_view] = np.mean([r["queries_served"] for r in surv])
        assert survivals[400] >= survivals[50]

    def test_empty_stream_rejected(self):
        vset, tree, _ = make_indexed(100, with_edges=False)
        with pytest.raises(UsageError):
            serve_stream(tree, np.empty((0, 8), dtype=np.float32), k=5, k_view=10,
                         policy=RadiusPolicy())
