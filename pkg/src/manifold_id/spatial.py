"""Global Moran's I with permutation inference, spatial weights, two-sample KS."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .errors import DimensionMismatch, EmptySample, IsolatedUnit, ParseError, ZeroVariance

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class SpatialWeights:
    w: np.ndarray
    ids: tuple = ()

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionMismatch("weights must be a square matrix")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if np.any(np.diag(w) != 0):
            raise ValueError("weights must have a zero diagonal")
        empty = np.flatnonzero(~(w > 0).any(axis=1))
        if empty.size:
            who = self.ids[empty[0]] if self.ids else empty[0]
            raise IsolatedUnit(who)
        ids = tuple(str(i) for i in self.ids) if len(self.ids) else tuple(str(i) for i in range(len(w)))
        if len(ids) != len(w):
            raise DimensionMismatch("one id per row required")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "ids", ids)

    @property
    def W_sum(self) -> float:
        return float(self.w.sum())

    def subset(self, ids) -> "SpatialWeights":
        """Restrict to ``ids`` (in that order); units left without neighbours raise."""
        pos = {k: i for i, k in enumerate(self.ids)}
        missing = [k for k in ids if k not in pos]
        if missing:
            raise DimensionMismatch(f"no spatial weights for {missing[:5]}")
        idx = [pos[k] for k in ids]
        return SpatialWeights(self.w[np.ix_(idx, idx)], tuple(ids))


@dataclass(frozen=True)
class MoranResult:
    I: float
    p_value: float
    n_perm: int


def morans_i(values, weights: SpatialWeights) -> float:
    """I = (N / W) * sum_ij w_ij z_i z_j / sum_i z_i^2 with z = x - mean(x)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    w = weights.w if isinstance(weights, SpatialWeights) else np.asarray(weights, dtype=np.float64)
    if w.shape != (x.size, x.size):
        raise DimensionMismatch(f"{x.size} values for a {w.shape} weights matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    z = x - x.mean()
    denom = z @ z
    if denom == 0.0 or np.all(x == x[0]):
        raise ZeroVariance()
    return float(x.size / w.sum() * (z @ w @ z) / denom)


def moran_permutation_test(values, weights: SpatialWeights, n_perm: int = 999, seed: int = 0) -> MoranResult:
    """One-sided permutation test for positive autocorrelation.

    p = (1 + #{I* >= I_obs}) / (1 + n_perm), permutations drawn from
    ``numpy.random.default_rng(seed)``.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    x = np.asarray(values, dtype=np.float64).ravel()
    observed = morans_i(x, weights)
    w = weights.w
    rng = np.random.default_rng(seed)
    z = x - x.mean()
    scale = x.size / w.sum() / (z @ z)
    hits = 0
    for start in range(0, n_perm, 256):
        m = min(256, n_perm - start)
        Z = rng.permuted(np.tile(z, (m, 1)), axis=1)
        stats = scale * np.einsum("ij,ij->i", Z @ w, Z)
        hits += int(np.sum(stats >= observed - 1e-12 * abs(observed)))
    return MoranResult(observed, (1 + hits) / (1 + n_perm), int(n_perm))


def haversine_km(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def build_knn_weights(centroids, k: int = 5, ids=()) -> SpatialWeights:
    """Binary directed weights: w_ij = 1 iff j is among the k nearest centroids of i.

    Args:
        centroids: (n, 2) array of (lat, lon) in degrees.
        k: neighbours per unit; ties go to the lower index.
    """
    c = np.asarray(centroids, dtype=np.float64)
    n = c.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    dist = haversine_km(c[:, None, 0], c[:, None, 1], c[None, :, 0], c[None, :, 1])
    np.fill_diagonal(dist, np.inf)
    w = np.zeros((n, n))
    for i in range(n):
        order = np.lexsort((np.arange(n), dist[i]))[:k]
        w[i, order] = 1.0
    return SpatialWeights(w, tuple(ids))


def load_adjacency(path, ids) -> SpatialWeights:
    """Read a ``from,to`` edge list into binary weights over ``ids``.

    Edges naming units outside ``ids`` are ignored.
    """
    pos = {k: i for i, k in enumerate(ids)}
    w = np.zeros((len(ids), len(ids)))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["from", "to"]:
            raise ParseError(path, 1, "expected header 'from,to'")
        for line, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise ParseError(path, line, "expected two fields")
            a, b = row[0].strip(), row[1].strip()
            if a in pos and b in pos and a != b:
                w[pos[a], pos[b]] = 1.0
    return SpatialWeights(w, tuple(ids))


def load_centroids(path):
    """Read ``id,lat,lon`` rows; returns (ids, (n, 2) array)."""
    ids, coords = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "lat", "lon"} <= set(reader.fieldnames):
            raise ParseError(path, 1, "expected columns id,lat,lon")
        for line, row in enumerate(reader, start=2):
            try:
                coords.append((float(row["lat"]), float(row["lon"])))
            except (TypeError, ValueError):
                raise ParseError(path, line, "lat/lon must be numbers") from None
            ids.append(row["id"].strip())
    return tuple(ids), np.array(coords).reshape(-1, 2)


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov test.

    Returns ``(D, p)`` with D = sup |F_a - F_b| from an exact sweep over the
    pooled sample (ties handled) and p from the asymptotic Kolmogorov
    distribution at (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D, ne = nm / (n + m).
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples need at least one value")
    grid = np.concatenate([a, b])
    Fa = np.searchsorted(a, grid, side="right") / a.size
    Fb = np.searchsorted(b, grid, side="right") / b.size
    D = float(np.max(np.abs(Fa - Fb)))
    ne = a.size * b.size / (a.size + b.size)
    root = math.sqrt(ne)
    p = float(special.kolmogorov((root + 0.12 + 0.11 / root) * D))
    return D, min(1.0, max(0.0, p))
