"""Seeded flat manifolds with known intrinsic dimension."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .geometry import DataMatrix

KINDS = ("uniform_hypercube", "isotropic_gaussian")


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str = "uniform_hypercube"
    d_true: int = 2
    n: int = 100
    embed_D: int = 2
    offset: tuple | float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 1 <= self.d_true <= self.embed_D:
            raise DimensionMismatch(f"need 1 <= d_true <= embed_D, got {self.d_true}, {self.embed_D}")
        if self.n < 3:
            raise DimensionMismatch("n must be >= 3")
        if np.ndim(self.offset) and len(self.offset) != self.embed_D:
            raise DimensionMismatch("offset length must equal embed_D")

    def offset_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.offset, dtype=np.float64), (self.embed_D,)).copy()


def _sample(spec: ManifoldSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform_hypercube":
        z = rng.random((spec.n, spec.d_true))
    else:
        z = rng.standard_normal((spec.n, spec.d_true))
    X = np.tile(spec.offset_vector(), (spec.n, 1))
    X[:, : spec.d_true] += z
    return X


def sample_manifold(spec: ManifoldSpec) -> DataMatrix:
    """n points on a d_true-dimensional flat patch inside embed_D dimensions.

    The first ``d_true`` coordinates are random (unit cube or unit-variance
    Gaussian), shifted by the offset; the rest equal the offset.
    """
    return DataMatrix(_sample(spec))


def mix_manifolds(specs, separation: float = 10.0):
    """Concatenate several manifolds, group ``g`` shifted by ``g * separation`` on axis 0.

    Returns:
        (DataMatrix, labels) with labels 1..len(specs) per row.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one spec")
    D = specs[0].embed_D
    if any(s.embed_D != D for s in specs):
        raise DimensionMismatch("all specs must share embed_D")
    blocks, labels = [], []
    for g, spec in enumerate(specs):
        X = _sample(spec)
        X[:, 0] += g * separation
        blocks.append(X)
        labels.append(np.full(spec.n, g + 1, dtype=np.int64))
    return DataMatrix(np.vstack(blocks)), np.concatenate(labels)
