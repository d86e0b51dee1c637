"""Post-processing of Hidalgo traces.

Everything here is computed from observation-indexed quantities (co-clustering
counts, per-observation ID chains), so the results do not change when the
sampler permutes component indices between iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyCandidates, LabelOutOfRange

_BATCH = 64


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray  # 1..K, renumbered by decreasing cluster size
    K: int
    vi_score: float


@dataclass(frozen=True)
class ObservationIdChains:
    chains: np.ndarray  # nsim x n
    medians: np.ndarray


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    median: float
    ci_low: float
    ci_high: float

    @classmethod
    def of(cls, values, ci_level: float) -> "Summary":
        v = np.asarray(values, dtype=np.float64).ravel()
        tail = (1.0 - ci_level) / 2.0
        lo, hi = np.quantile(v, [tail, 1.0 - tail])
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return cls(float(v.mean()), sd, float(np.median(v)), float(lo), float(hi))


@dataclass(frozen=True)
class ClusterSummary:
    cluster: int
    size: int
    members: tuple
    pooled: Summary
    component: Summary


def _onehot_stack(labels, L):
    """n x (nsim*L) indicator matrix with column t*L + (label-1) set."""
    nsim, n = labels.shape
    H = np.zeros((n, nsim * L))
    cols = (np.arange(nsim)[:, None] * L + labels - 1).T
    H[np.arange(n)[:, None], cols] = 1.0
    return H


def co_clustering(traces, chunk: int = 2048) -> np.ndarray:
    """Posterior co-clustering matrix: share of iterations with i and j together.

    Counts are accumulated exactly (integer-valued sums), then divided by nsim.
    """
    labels = np.asarray(traces.labels if hasattr(traces, "labels") else traces)
    if labels.ndim != 2 or labels.shape[0] < 1:
        raise DimensionMismatch("labels must be a non-empty nsim x n matrix")
    L = int(labels.max())
    if labels.min() < 1:
        raise LabelOutOfRange("labels must be >= 1")
    nsim, n = labels.shape
    counts = np.zeros((n, n))
    for start in range(0, nsim, chunk):
        H = _onehot_stack(labels[start:start + chunk], L)
        counts += H @ H.T
    pcm = counts / nsim
    np.fill_diagonal(pcm, 1.0)
    return pcm


def canonical_labels(labels) -> np.ndarray:
    """Relabel clusters 1..K by decreasing size, ties by smallest member index."""
    labels = np.asarray(labels)
    uniq, first, inverse, sizes = np.unique(labels, return_index=True, return_inverse=True,
                                            return_counts=True)
    rank = np.lexsort((first, -sizes))
    new = np.empty(len(uniq), dtype=np.int64)
    new[rank] = np.arange(1, len(uniq) + 1)
    return new[inverse.ravel()]


def variation_of_information(a, b) -> float:
    """VI between two partitions of the same items, in bits."""
    a = canonical_labels(a)
    b = canonical_labels(b)
    n = len(a)
    joint = np.zeros((a.max(), b.max()))
    np.add.at(joint, (a - 1, b - 1), 1.0)
    joint /= n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    # H(A) + H(B) - 2 I(A;B) written as a single sum over the joint
    ratio = joint[nz] ** 2 / np.outer(pa, pb)[nz]
    return float(max(0.0, -np.sum(joint[nz] * np.log2(ratio))))


def expected_vi_lower_bound(pcm, candidates) -> np.ndarray:
    """Lower bound on posterior expected VI for each candidate partition.

    For candidate C with cluster C(i) of item i:
    (1/n) sum_i [log2 |C(i)| + log2 sum_j p_ij - 2 log2 sum_{j in C(i)} p_ij].
    """
    pcm = np.asarray(pcm, dtype=np.float64)
    cands = np.atleast_2d(np.asarray(candidates))
    n = pcm.shape[0]
    row_mass = np.log2(pcm.sum(axis=1)).sum()
    scores = np.empty(len(cands))
    for start in range(0, len(cands), _BATCH):
        batch = [canonical_labels(c) for c in cands[start:start + _BATCH]]
        widths = [c.max() for c in batch]
        offsets = np.concatenate([[0], np.cumsum(widths)])
        H = np.zeros((n, offsets[-1]))
        for b, c in enumerate(batch):
            H[np.arange(n), offsets[b] + c - 1] = 1.0
        within = pcm @ H
        for b, c in enumerate(batch):
            cols = offsets[b] + c - 1
            size = np.bincount(c)[c]
            mass = within[np.arange(n), cols]
            scores[start + b] = (np.log2(size).sum() + row_mass - 2.0 * np.log2(mass).sum()) / n
    return scores


def vi_partition(pcm, candidates) -> Partition:
    """Candidate with the smallest expected-VI bound.

    Ties go to fewer clusters, then to the earliest candidate.
    """
    cands = [np.asarray(c) for c in candidates]
    if not cands:
        raise EmptyCandidates("no candidate partitions")
    n = np.asarray(pcm).shape[0]
    if any(c.shape != (n,) for c in cands):
        raise DimensionMismatch(f"every candidate must have length {n}")
    scores = expected_vi_lower_bound(pcm, np.vstack(cands))
    ks = np.array([len(np.unique(c)) for c in cands])
    best = np.lexsort((np.arange(len(cands)), ks, scores))[0]
    labels = canonical_labels(cands[best])
    labels.setflags(write=False)
    return Partition(labels, int(labels.max()), float(scores[best]))


def unique_partitions(labels) -> np.ndarray:
    """Sampled label vectors, canonicalised and deduplicated in order of first appearance."""
    canon = np.vstack([canonical_labels(row) for row in np.asarray(labels)])
    _, first = np.unique(canon, axis=0, return_index=True)
    return canon[np.sort(first)]


def vi_partition_from_traces(traces, pcm=None) -> Partition:
    if pcm is None:
        pcm = co_clustering(traces)
    return vi_partition(pcm, unique_partitions(traces.labels))


def remap_observation_chains(traces) -> ObservationIdChains:
    """Map component ID chains to per-observation chains d_{c_i}."""
    labels = np.asarray(traces.labels)
    ids = np.asarray(traces.ids)
    if labels.shape[0] != ids.shape[0]:
        raise DimensionMismatch("labels and ids have different numbers of iterations")
    L = ids.shape[1]
    if labels.min() < 1 or labels.max() > L:
        raise LabelOutOfRange(f"labels must lie in 1..{L}")
    chains = np.take_along_axis(ids, labels - 1, axis=1)
    medians = np.median(chains, axis=0)
    return ObservationIdChains(chains, medians)


def component_chain(labels, ids, members):
    """Per iteration, the ID of the component holding most of ``members``.

    Ties go to the component that holds the lowest-indexed member, which does
    not depend on how components are numbered.
    """
    sub = labels[:, members]
    out = np.empty(labels.shape[0])
    for t, row in enumerate(sub):
        uniq, first, counts = np.unique(row, return_index=True, return_counts=True)
        pick = np.lexsort((first, -counts))[0]
        out[t] = ids[t, uniq[pick] - 1]
    return out


def cluster_id_summary(partition: Partition, obs_chains: ObservationIdChains, traces=None,
                       ci_level: float = 0.9) -> list:
    """ID statistics for each cluster of ``partition``.

    ``pooled`` pools the observation chains of all members. ``component``
    follows, at every iteration, the component holding most members; it is
    filled only when ``traces`` is given (otherwise it repeats ``pooled``).
    """
    labels = np.asarray(partition.labels)
    if labels.shape[0] != obs_chains.chains.shape[1]:
        raise DimensionMismatch("partition and chains cover different observations")
    out = []
    for k in range(1, int(labels.max()) + 1):
        members = np.flatnonzero(labels == k)
        pooled = Summary.of(obs_chains.chains[:, members], ci_level)
        if traces is not None:
            comp = Summary.of(component_chain(np.asarray(traces.labels), np.asarray(traces.ids),
                                               members), ci_level)
        else:
            comp = pooled
        out.append(ClusterSummary(k, int(members.size), tuple(int(m) for m in members), pooled, comp))
    return out
