"""Disk-based approximate nearest neighbor index.

Pipeline: recursive k-means++ partitioning of the dataset, a self-balancing
B+tree variant keyed by cluster centroids with vector blocks in the leaves,
an optional skip-edge graph between leaf vectors for greedy refinement, a
locality-preserving page file with an LRU-capped node cache, and semantic
views that serve temporally correlated query streams from memory.
"""

from .cluster import ClusterNode, KMeansParams, hcluster, kmeans_pp
from .core import (
    Backing,
    Metric,
    Neighbor,
    VectorSet,
    brute_force_knn,
    distance,
    distance_one_to_many,
    recall_at,
)
from .edges import EdgeParams, SkipEdgeGraph, avg_hops, build_skip_edges, greedy_search, nearest_leaves
from .errors import (
    BPlusAnnError,
    DomainError,
    FormatError,
    IntegrityError,
    StorageError,
    UsageError,
)
from .search import (
    FarthestRngBaseline,
    SearchParams,
    SearchStats,
    rng_dissimilar_baseline,
    search,
    search_batch,
    search_dissimilar,
)
from .storage import DiskTree, PageFile, load_tree, open_index, serialize
from .tree import BPlusAnnTree, BuildParams, TreeNode, build_tree, insert, split_node, verify_tree
from .views import OracleRecallPolicy, RadiusPolicy, View, create_view, serve_stream, view_search

__version__ = "0.1.0"
