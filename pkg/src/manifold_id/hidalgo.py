"""Hidalgo: a Gibbs sampler for a mixture of Pareto ratio likelihoods with a
neighbourhood label-agreement term.

Model, for ratios mu_i and q-NN graph N:

    mu_i | c_i = l  ~ Pareto(1, d_l)
    c_i | pi        ~ Categorical(pi)
    d_l             ~ Gamma(a_d, b_d)      (truncated to (0, d_max])
    pi              ~ Dirichlet(alpha, ..., alpha)

and every directed edge i -> j with j in N_i contributes a factor zeta when
c_i == c_j and (1 - zeta) otherwise. Each edge factor is a normalised
Bernoulli(zeta) term, so the per-point normaliser is 1 and the model becomes
the plain mixture at zeta = 0.5.

Random stream: when no initial state is supplied, ``n`` label integers, then
a d draw and a pi draw as in steps 2 and 3 below. Then, per sweep:

1. ``n`` uniforms, one per label update in row order;
2. one Gamma draw per component, then re-draws for any draw above ``d_max``;
3. one Dirichlet draw.

Steps 2 and 3 and the categorical inversion in step 1 visit components in a
canonical order (non-empty components by their smallest member index, then
empty ones by their current ID), so relabelling the components of the
initial state relabels the whole chain and nothing else.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numba
import numpy as np
from scipy import stats

from .errors import ConfigInvalid, DimensionMismatch
from .geometry import DataMatrix, NeighborGraph, _as_array, mu_ratios, nearest_neighbors, neighbor_graph

TRUNCATION_RETRIES = 100
NORMALISERS = ("none", "cluster_size")


@dataclass(frozen=True)
class HidalgoConfig:
    L: int = 6
    alpha: float = 0.05
    a_d: float = 1.0
    b_d: float = 1.0
    zeta: float = 0.75
    q: int = 3
    nsim: int = 25_000
    burnin: int = 1_000
    seed: int = 0
    d_max: float | None = None
    normaliser: str = "none"

    def validate(self) -> "HidalgoConfig":
        problems = []
        if int(self.L) != self.L or self.L < 1:
            problems.append("L must be an integer >= 1")
        if not self.alpha > 0:
            problems.append("alpha must be > 0")
        if not (self.a_d > 0 and self.b_d > 0):
            problems.append("a_d and b_d must be > 0")
        if not 0.5 <= self.zeta < 1:
            problems.append("zeta must lie in [0.5, 1)")
        if int(self.q) != self.q or self.q < 1:
            problems.append("q must be an integer >= 1")
        if int(self.nsim) != self.nsim or self.nsim < 1:
            problems.append("nsim must be an integer >= 1")
        if int(self.burnin) != self.burnin or self.burnin < 0:
            problems.append("burnin must be an integer >= 0")
        if self.d_max is not None and not self.d_max > 0:
            problems.append("d_max must be > 0")
        if self.normaliser not in NORMALISERS:
            problems.append(f"normaliser must be one of {NORMALISERS}")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self


@dataclass
class ChainState:
    """Current Gibbs state. ``c`` holds 0-based component indices."""

    d: np.ndarray
    pi: np.ndarray
    c: np.ndarray

    def copy(self) -> "ChainState":
        return ChainState(self.d.copy(), self.pi.copy(), self.c.copy())

    def counts(self, L: int | None = None) -> np.ndarray:
        return np.bincount(self.c, minlength=len(self.d) if L is None else L)


@dataclass(frozen=True)
class McmcTraces:
    """Post burn-in output. ``labels`` are 1-based component numbers."""

    labels: np.ndarray
    weights: np.ndarray
    ids: np.ndarray
    config: HidalgoConfig
    row_ids: tuple = field(default=())

    @property
    def nsim(self) -> int:
        return self.labels.shape[0]

    @property
    def n(self) -> int:
        return self.labels.shape[1]

    @property
    def L(self) -> int:
        return self.ids.shape[1]

    def save(self, directory) -> None:
        """Write ``labels.csv``, ``weights.csv``, ``ids.csv`` and ``config.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        row_ids = self.row_ids or tuple(str(i) for i in range(self.n))
        comps = [f"comp_{l + 1}" for l in range(self.L)]
        _write_csv(out / "labels.csv", row_ids, self.labels, "%d")
        _write_csv(out / "weights.csv", comps, self.weights, "%.17g")
        _write_csv(out / "ids.csv", comps, self.ids, "%.17g")
        echo = {"config": asdict(self.config), "row_ids": list(row_ids)}
        (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "McmcTraces":
        src = Path(directory)
        echo = json.loads((src / "config.json").read_text())
        labels = np.loadtxt(src / "labels.csv", delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        weights = np.loadtxt(src / "weights.csv", delimiter=",", skiprows=1, ndmin=2)
        ids = np.loadtxt(src / "ids.csv", delimiter=",", skiprows=1, ndmin=2)
        return cls(labels, weights, ids, HidalgoConfig(**echo["config"]), tuple(echo["row_ids"]))


def _write_csv(path, header, rows, fmt):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, rows, delimiter=",", fmt=fmt)


def canonical_order(state: ChainState) -> np.ndarray:
    """Components sorted by smallest member index, empty ones last by ID."""
    L = len(state.d)
    n = len(state.c)
    first = np.full(L, n, dtype=np.int64)
    np.minimum.at(first, state.c, np.arange(n))
    return np.lexsort((np.arange(L), state.d, first))


def _truncated_gamma(rng, shape, rate, d_max, order):
    """Gamma(shape, rate) draws truncated to (0, d_max], visited in ``order``."""
    shape = shape[order]
    scale = 1.0 / rate[order]
    draws = rng.gamma(shape, scale)
    for _ in range(TRUNCATION_RETRIES):
        bad = np.flatnonzero((draws > d_max) | (draws <= 0.0))
        if bad.size == 0:
            break
        draws[bad] = rng.gamma(shape[bad], scale[bad])
    else:
        draws[(draws > d_max) | (draws <= 0.0)] = d_max
    out = np.empty_like(draws)
    out[order] = draws
    return out


def sample_d_conditional(state, log_mu, config: HidalgoConfig, rng, d_max=np.inf, order=None):
    """Draw every d_l from Gamma(a_d + n_l, b_d + sum of log mu over members of l).

    Empty components draw from the prior. Draws above ``d_max`` are rejected
    up to ``TRUNCATION_RETRIES`` times, then set to ``d_max``.
    """
    L = len(state.d)
    n_l = np.bincount(state.c, minlength=L)
    s_l = np.bincount(state.c, weights=log_mu, minlength=L)
    if order is None:
        order = canonical_order(state)
    return _truncated_gamma(rng, config.a_d + n_l, config.b_d + s_l, d_max, order)


def sample_pi_conditional(state, config: HidalgoConfig, rng, order=None):
    """Draw pi from Dirichlet(alpha + n_1, ..., alpha + n_L)."""
    L = len(state.d)
    conc = config.alpha + np.bincount(state.c, minlength=L)
    if order is None:
        order = canonical_order(state)
    draw = rng.dirichlet(conc[order])
    pi = np.empty(L)
    pi[order] = draw
    return pi


def agreement_counts(c, graph: NeighborGraph, L: int) -> np.ndarray:
    """m[i, l]: edges touching i (either direction) whose other end has label l."""
    indptr, incident = graph.incident()
    owner = np.repeat(np.arange(graph.n), np.diff(indptr))
    m = np.zeros((graph.n, L), dtype=np.int64)
    np.add.at(m, (owner, c[incident]), 1)
    return m


def normaliser_increments(n: int, q: int, zeta: float, kind: str) -> np.ndarray:
    """Extra log mass for joining a component that already has ``k`` other members.

    ``"none"``: every edge factor is a self-normalised Bernoulli(zeta), so the
    increment is zero.

    ``"cluster_size"``: each point's neighbourhood term is divided by
    Z(k) = E[zeta^S (1-zeta)^(q-S)], S ~ Hypergeometric(n-1, k-1, q), the
    value expected if its q neighbours were drawn at random. With
    F(k) = k log Z(k) the joint carries -sum_l F(n_l), so joining a component
    of ``k`` others adds -(F(k+1) - F(k)).
    """
    if kind == "none":
        return np.zeros(n)
    sizes = np.arange(1, n + 1)
    s = np.arange(q + 1)
    pmf = stats.hypergeom.pmf(s[None, :], n - 1, sizes[:, None] - 1, q)
    log_z = np.log(pmf @ (zeta ** s * (1.0 - zeta) ** (q - s)))
    F = np.concatenate([[0.0], sizes * log_z])
    return -np.diff(F)


def conditional_label_probs(i, state, log_mu, graph: NeighborGraph, zeta: float,
                            normaliser: str = "none") -> np.ndarray:
    """Full conditional P(c_i = l | rest), evaluated directly.

    Unnormalised mass: pi_l d_l mu_i^-(d_l+1) zeta^m (1-zeta)^(q + r_i - m),
    with m the number of edges touching i whose other end carries label l,
    times the cluster-size factor when ``normaliser="cluster_size"``.
    """
    L = len(state.d)
    m = agreement_counts(state.c, graph, L)[i]
    total = graph.q + graph.in_degree()[i]
    others = np.bincount(np.delete(state.c, i), minlength=L)
    size_term = normaliser_increments(graph.n, graph.q, zeta, normaliser)[others]
    with np.errstate(divide="ignore"):
        logp = (
            np.log(state.pi)
            + np.log(state.d)
            - (state.d + 1.0) * log_mu[i]
            + m * math.log(zeta)
            + (total - m) * math.log1p(-zeta)
            + size_term
        )
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


@numba.njit(cache=True)
def _label_sweep(c, base, indptr, incident, log_odds, size_term, order, u):
    n, L = base.shape
    logp = np.empty(L)
    cum = np.empty(L)
    counts = np.zeros(L, dtype=np.int64)
    for i in range(n):
        counts[c[i]] += 1
    for i in range(n):
        counts[c[i]] -= 1
        for l in range(L):
            logp[l] = base[i, l] + size_term[counts[l]]
        for e in range(indptr[i], indptr[i + 1]):
            logp[c[incident[e]]] += log_odds
        top = -np.inf
        for l in range(L):
            if logp[l] > top:
                top = logp[l]
        acc = 0.0
        for r in range(L):
            l = order[r]
            acc += np.exp(logp[l] - top)
            cum[r] = acc
        target = u[i] * acc
        pick = order[L - 1]
        for r in range(L):
            if target < cum[r]:
                pick = order[r]
                break
        c[i] = pick
        counts[pick] += 1


def sample_c_conditional(state, log_mu, graph: NeighborGraph, config: HidalgoConfig, rng,
                         order=None, incidence=None, size_term=None):
    """Resample every label once, in row order, from its full conditional.

    Uses ``n`` uniforms from ``rng``; returns the new label vector.
    """
    c = state.c.astype(np.int64).copy()
    if order is None:
        order = canonical_order(state)
    if incidence is None:
        incidence = graph.incident()
    if size_term is None:
        size_term = normaliser_increments(len(c), graph.q, config.zeta, config.normaliser)
    with np.errstate(divide="ignore"):
        base = np.log(state.pi) + np.log(state.d) - np.outer(log_mu, state.d + 1.0)
    # constant (1 - zeta) factors cancel; only agreements shift the log mass
    log_odds = math.log(config.zeta) - math.log1p(-config.zeta)
    u = rng.random(len(c))
    _label_sweep(c, base, incidence[0], incidence[1], log_odds, size_term,
                 order.astype(np.int64), u)
    return c


def initial_state(n: int, log_mu, config: HidalgoConfig, rng, d_max=np.inf) -> ChainState:
    """Labels uniform at random; d and pi drawn from their conditionals given them.

    Drawing pi from the sparse prior instead would hand almost all mass to one
    component and collapse the chain on its first sweep.
    """
    L = config.L
    state = ChainState(np.ones(L), np.full(L, 1.0 / L), rng.integers(0, L, size=n))
    order = canonical_order(state)
    state.d = sample_d_conditional(state, log_mu, config, rng, d_max, order)
    state.pi = sample_pi_conditional(state, config, rng, order)
    return state


def run_gibbs(log_mu, graph: NeighborGraph, config: HidalgoConfig, d_max: float,
              init: ChainState | None = None, freeze_labels: bool = False, row_ids=()):
    """Run ``burnin + nsim`` sweeps on precomputed log ratios and graph."""
    config = config.validate()
    n = len(log_mu)
    L = config.L
    rng = np.random.default_rng(config.seed)
    if init is None:
        state = initial_state(n, log_mu, config, rng, d_max)
    else:
        state = init.copy()
        if len(state.d) != L or len(state.pi) != L or len(state.c) != n:
            raise DimensionMismatch("initial state does not match n and L")
        state.c = state.c.astype(np.int64)
    incidence = graph.incident()
    labels = np.empty((config.nsim, n), dtype=np.int64)
    weights = np.empty((config.nsim, L))
    ids = np.empty((config.nsim, L))
    size_term = normaliser_increments(n, graph.q, config.zeta, config.normaliser)
    for t in range(config.burnin + config.nsim):
        order = canonical_order(state)
        if freeze_labels:
            rng.random(n)  # keep the stream layout identical
        else:
            state.c = sample_c_conditional(state, log_mu, graph, config, rng, order, incidence, size_term)
        state.d = sample_d_conditional(state, log_mu, config, rng, d_max, order)
        state.pi = sample_pi_conditional(state, config, rng, order)
        k = t - config.burnin
        if k >= 0:
            labels[k] = state.c + 1
            weights[k] = state.pi
            ids[k] = state.d
    for arr in (labels, weights, ids):
        arr.setflags(write=False)
    return McmcTraces(labels, weights, ids, replace(config, d_max=d_max), tuple(row_ids))


def hidalgo_fit(data, config: HidalgoConfig = HidalgoConfig(), init: ChainState | None = None,
                freeze_labels: bool = False) -> McmcTraces:
    """Fit the heterogeneous-ID mixture to a data matrix.

    Args:
        data: :class:`DataMatrix` or (n, D) array with unique rows.
        config: sampler settings; ``d_max=None`` means the nominal dimension D.
        init: optional starting state (0-based labels); drawn from the seeded
            RNG when omitted.
        freeze_labels: keep the labels fixed at their initial values.

    Returns:
        :class:`McmcTraces` holding the ``nsim`` post burn-in sweeps.
    """
    config = config.validate()
    X = _as_array(data)
    n, D = X.shape
    if n <= config.L:
        raise ConfigInvalid(f"need more points (n={n}) than components (L={config.L})")
    table = nearest_neighbors(X, max(2, config.q))
    log_mu = np.log(mu_ratios(table))
    graph = neighbor_graph(table, config.q)
    d_max = float(D if config.d_max is None else config.d_max)
    row_ids = data.row_ids if isinstance(data, DataMatrix) else ()
    return run_gibbs(log_mu, graph, config, d_max, init, freeze_labels, row_ids)
