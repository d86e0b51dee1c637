"""Exact nearest neighbours, distance ratios and q-NN graphs.

All distances are Euclidean and kept in double precision. Two search paths
exist: a chunked all-pairs scan (default up to ``BRUTE_FORCE_MAX_N`` rows) and
a k-d tree for larger inputs. Both return the same neighbours and recompute
the final distances with the same routine, so results do not depend on the
path taken for tie-free data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import DegenerateRatio, DimensionMismatch, DuplicateRows, KTooLarge, QTooLarge

BRUTE_FORCE_MAX_N = 10_000
_CHUNK_BYTES = 64 * 2**20


@dataclass(frozen=True)
class DataMatrix:
    """An ``n x D`` real matrix with unique row labels.

    Args:
        values: array of shape (n, D), finite.
        row_ids: one label per row. Defaults to ``"0", "1", ...``.
    """

    values: np.ndarray
    row_ids: tuple = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionMismatch("data must be a 2-D array")
        n, D = values.shape
        if n < 3 or D < 1:
            raise DimensionMismatch(f"need n >= 3 rows and D >= 1 columns, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DimensionMismatch("data contains non-finite values")
        row_ids = tuple(str(r) for r in self.row_ids) if len(self.row_ids) else tuple(
            str(i) for i in range(n)
        )
        if len(row_ids) != n:
            raise DimensionMismatch(f"{len(row_ids)} row ids for {n} rows")
        if len(set(row_ids)) != n:
            raise DimensionMismatch("row ids must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NeighborTable:
    """Neighbour indices and distances, ordered by increasing distance.

    Column ``j`` holds the (j+1)-th nearest neighbour; the point itself is
    never included.
    """

    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    @property
    def n(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class NeighborGraph:
    """Directed q-NN adjacency: row ``i`` of ``neighbors`` is N_i."""

    neighbors: np.ndarray

    @property
    def q(self) -> int:
        return self.neighbors.shape[1]

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    def in_degree(self) -> np.ndarray:
        """r_i = |{j : i in N_j}| for every i."""
        return np.bincount(self.neighbors.ravel(), minlength=self.n)

    def incident(self):
        """CSR arrays listing, for each i, every j joined to i by an edge.

        Both directions are included, so a mutual pair appears twice.
        Returns ``(indptr, indices)``.
        """
        n, q = self.neighbors.shape
        src = np.repeat(np.arange(n), q)
        dst = self.neighbors.ravel()
        # i -> j contributes j to i's list; j -> i contributes j to i's list
        owner = np.concatenate([src, dst])
        other = np.concatenate([dst, src])
        order = np.lexsort((other, owner))
        owner, other = owner[order], other[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(owner, minlength=n), out=indptr[1:])
        return indptr, other.astype(np.int64)


def _as_array(data) -> np.ndarray:
    if isinstance(data, DataMatrix):
        return data.values
    X = np.asarray(data, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def _row_distances(X, i, idx):
    diff = X[idx] - X[i]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _select(row, i, k, X):
    """k nearest of one distance row (self masked), ties to the lower index."""
    thr = np.partition(row, k - 1)[k - 1]
    # slack so ulp differences between cdist and the exact pass cannot drop a candidate
    cand = np.flatnonzero(row <= thr * (1.0 + 1e-9))
    exact = _row_distances(X, i, cand)
    order = np.lexsort((cand, exact))[:k]
    return cand[order], exact[order]


def _check_duplicates(i, idx, dist):
    if dist[0] == 0.0:
        j = int(idx[0])
        raise DuplicateRows(min(i, j), max(i, j))


def _brute_force(X, k):
    n, D = X.shape
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    chunk = max(1, int(_CHUNK_BYTES // (8 * max(n, 1) * 2)))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = cdist(X[start:stop], X)
        block[np.arange(stop - start), np.arange(start, stop)] = np.inf
        for r, row in enumerate(block):
            i = start + r
            idx, dist = _select(row, i, k, X)
            _check_duplicates(i, idx, dist)
            indices[i], distances[i] = idx, dist
    return indices, distances


def _tree(X, k):
    n = X.shape[0]
    tree = cKDTree(X)
    # one spare slot so the query point itself can be dropped
    _, raw = tree.query(X, k=k + 2)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    for i in range(n):
        cand = raw[i][raw[i] != i]
        exact = _row_distances(X, i, cand)
        order = np.lexsort((cand, exact))[:k]
        idx, dist = cand[order], exact[order]
        _check_duplicates(i, idx, dist)
        indices[i], distances[i] = idx, dist
    return indices, distances


def nearest_neighbors(data, k: int, method: str = "auto") -> NeighborTable:
    """Exact Euclidean k nearest neighbours of every row.

    Args:
        data: a :class:`DataMatrix` or array of shape (n, D).
        k: neighbours per point, ``1 <= k < n``.
        method: ``"brute"``, ``"tree"`` or ``"auto"`` (brute force up to
            ``BRUTE_FORCE_MAX_N`` rows).

    Raises:
        KTooLarge: if ``k >= n``.
        DuplicateRows: if two rows coincide.
    """
    X = _as_array(data)
    n = X.shape[0]
    if k < 1:
        raise KTooLarge(f"k must be >= 1, got {k}")
    if k >= n:
        raise KTooLarge(f"k={k} must be smaller than n={n}")
    if method == "auto":
        method = "brute" if n <= BRUTE_FORCE_MAX_N else "tree"
    if method == "brute":
        indices, distances = _brute_force(X, k)
    elif method == "tree":
        if k + 2 > n:
            indices, distances = _brute_force(X, k)
        else:
            indices, distances = _tree(X, k)
    else:
        raise ValueError(f"unknown method {method!r}")
    indices.setflags(write=False)
    distances.setflags(write=False)
    return NeighborTable(indices, distances)


def mu_ratios(table: NeighborTable) -> np.ndarray:
    """Second-to-first neighbour distance ratios, one per point.

    Raises:
        DegenerateRatio: at the first row where both distances are equal.
    """
    if table.k < 2:
        raise KTooLarge("ratios need at least two neighbours per point")
    r1 = table.distances[:, 0]
    r2 = table.distances[:, 1]
    bad = np.flatnonzero(r2 <= r1)
    if bad.size:
        raise DegenerateRatio(bad[0])
    return r2 / r1


def neighbor_graph(table: NeighborTable, q: int) -> NeighborGraph:
    """The first ``q`` neighbours of every point as a directed graph."""
    if q < 1 or q > table.k:
        raise QTooLarge(f"q={q} must lie in [1, k={table.k}]")
    nbrs = np.array(table.indices[:, :q])
    nbrs.setflags(write=False)
    return NeighborGraph(nbrs)
