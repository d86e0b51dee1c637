"""Heterogeneous intrinsic-dimension estimation for panel data."""

from .errors import ManifoldIdError
from .geometry import DataMatrix, NeighborGraph, NeighborTable, mu_ratios, nearest_neighbors, neighbor_graph
from .hidalgo import ChainState, HidalgoConfig, McmcTraces, hidalgo_fit
from .posterior import (
    Partition,
    co_clustering,
    cluster_id_summary,
    remap_observation_chains,
    variation_of_information,
    vi_partition,
    vi_partition_from_traces,
)
from .spatial import SpatialWeights, build_knn_weights, ks_two_sample, moran_permutation_test, morans_i
from .synthkit import ManifoldSpec, mix_manifolds, sample_manifold
from .twonn import IdEstimate, twonn, twonn_mle

__version__ = "0.1.0"
