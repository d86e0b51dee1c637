"""TWO-NN intrinsic dimension: Pareto shape maximum likelihood on mu ratios."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EmptyInput, NonParetoSupport
from .geometry import _as_array, mu_ratios, nearest_neighbors


@dataclass(frozen=True)
class IdEstimate:
    d_hat: float
    ci_low: float
    ci_high: float
    ci_level: float
    n_used: int
    exceeds_nominal: bool = False


def twonn_mle(ratios, ci_level: float = 0.95, nominal_dim: int | None = None) -> IdEstimate:
    """Maximum-likelihood ID from second/first neighbour distance ratios.

    Under the Pareto(1, d) model ``d * sum(log mu)`` is Gamma(n, 1), which
    gives an exact confidence interval rather than a normal approximation.

    Args:
        ratios: mu values, all strictly greater than 1.
        ci_level: coverage of the returned interval.
        nominal_dim: if given, estimates above it are flagged (not clamped).
    """
    mu = np.asarray(ratios, dtype=np.float64).ravel()
    n = mu.size
    if n < 2:
        raise EmptyInput(f"need at least 2 ratios, got {n}")
    if not np.all(mu > 1.0):
        raise NonParetoSupport(f"ratio {int(np.argmin(mu > 1.0))} is <= 1")
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must lie in (0, 1)")
    s = math.fsum(np.log(mu))
    d_hat = n / s
    tail = (1.0 - ci_level) / 2.0
    lo = stats.gamma.ppf(tail, n) / s
    hi = stats.gamma.isf(tail, n) / s
    exceeds = nominal_dim is not None and d_hat > nominal_dim
    if exceeds:
        warnings.warn(f"ID estimate {d_hat:.3g} exceeds nominal dimension {nominal_dim}")
    return IdEstimate(float(d_hat), float(lo), float(hi), ci_level, n, bool(exceeds))


def twonn_discard_fraction(ratios, fraction: float) -> np.ndarray:
    """Drop the ``ceil(fraction * n)`` largest ratios, keeping the order of the rest."""
    mu = np.asarray(ratios, dtype=np.float64).ravel()
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    drop = math.ceil(fraction * mu.size)
    if drop == 0:
        return mu.copy()
    # stable sort: among equal ratios the later ones go first
    order = np.argsort(mu, kind="stable")
    keep = np.ones(mu.size, dtype=bool)
    keep[order[mu.size - drop:]] = False
    return mu[keep]


def twonn(data, ci_level: float = 0.95, discard_fraction: float = 0.0) -> IdEstimate:
    """Convenience wrapper: neighbours, ratios, optional trimming, MLE."""
    X = _as_array(data)
    mu = mu_ratios(nearest_neighbors(X, 2))
    if discard_fraction:
        mu = twonn_discard_fraction(mu, discard_fraction)
    return twonn_mle(mu, ci_level, nominal_dim=X.shape[1])
