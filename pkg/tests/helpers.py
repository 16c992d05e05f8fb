"""Shared builders for the test suite."""

import numpy as np

from bplusann import (
    BuildParams,
    EdgeParams,
    KMeansParams,
    Metric,
    VectorSet,
    build_skip_edges,
    build_tree,
    hcluster,
)


def make_indexed(
    n,
    dim=8,
    metric=Metric.EUCLIDEAN,
    tau=64,
    kappa_leaf=64,
    kappa_inner=8,
    d_edge=8,
    s_leaf=4,
    seed=0,
    with_edges=True,
    data=None,
):
    """Synthetic dataset -> hierarchy -> tree (-> skip edges)."""
    if data is None:
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(n, dim)).astype(np.float32)
    vset = VectorSet(data)
    hierarchy = hcluster(vset, tau, KMeansParams(K=4, seed=seed), metric)
    tree = build_tree(
        hierarchy,
        vset,
        BuildParams(kappa_leaf=kappa_leaf, kappa_inner=kappa_inner, metric=metric, seed=seed),
    )
    graph = None
    if with_edges:
        graph = build_skip_edges(tree, EdgeParams(d_edge=d_edge, s_leaf=s_leaf))
    return vset, tree, graph


def clustered_data(n, dim=8, centers=8, spread=0.5, scale=20.0, seed=0):
    """Gaussian mixture that gives the partitioner real structure."""
    rng = np.random.default_rng(seed)
    mus = rng.uniform(-scale, scale, size=(centers, dim))
    assign = rng.integers(0, centers, size=n)
    return (mus[assign] + rng.normal(scale=spread, size=(n, dim))).astype(np.float32)


def exhaustive_beta(tree) -> int:
    """A beta at least the node count of any level: forces full traversal."""
    return len(tree.nodes)
