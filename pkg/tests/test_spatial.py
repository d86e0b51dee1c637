import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from manifold_id.errors import EmptySample, IsolatedUnit, ParseError, ZeroVariance
from manifold_id.spatial import (
    SpatialWeights,
    build_knn_weights,
    haversine_km,
    ks_two_sample,
    load_adjacency,
    load_centroids,
    moran_permutation_test,
    morans_i,
)


def cycle(n):
    w = np.zeros((n, n))
    for i in range(n):
        w[i, (i + 1) % n] = w[(i + 1) % n, i] = 1
    return SpatialWeights(w)


def moran_oracle(x, w):
    n = len(x)
    m = sum(x) / n
    num = sum(w[i][j] * (x[i] - m) * (x[j] - m) for i in range(n) for j in range(n))
    den = sum((xi - m) ** 2 for xi in x)
    return n / sum(map(sum, w)) * num / den


def test_alternating_cycle_is_minus_one():
    for n in (4, 10, 50):
        x = np.array([(-1) ** i for i in range(n)], dtype=float)
        assert abs(morans_i(x, cycle(n)) + 1.0) <= 1e-12


def test_constant_field():
    with pytest.raises(ZeroVariance):
        morans_i(np.full(5, 2.0), cycle(5))


def test_path_graph_oracle():
    w = [[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]]
    x = [1.0, 2.0, 3.0, 4.0]
    assert abs(morans_i(x, SpatialWeights(np.array(w, float))) - moran_oracle(x, w)) <= 1e-12
    assert moran_oracle(x, w) == pytest.approx(1 / 3)


@given(st.integers(0, 10_000), st.floats(-100, 100).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100))
def test_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    w = SpatialWeights(build_knn_weights(np.column_stack([rng.uniform(-60, 60, 15),
                                                          rng.uniform(-180, 180, 15)]), 3).w)
    x = rng.standard_normal(15)
    assert morans_i(a * x + b, w) == pytest.approx(morans_i(x, w), abs=1e-9)


def test_weights_validation():
    with pytest.raises(ValueError):
        SpatialWeights(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(IsolatedUnit):
        SpatialWeights(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), ("a", "b", "c"))
    w = cycle(4)
    assert w.W_sum == 8.0


def two_cliques(size=10):
    n = 2 * size
    w = np.zeros((n, n))
    w[:size, :size] = 1
    w[size:, size:] = 1
    np.fill_diagonal(w, 0)
    return SpatialWeights(w)


def test_permutation_clustered_cliques():
    x = np.r_[np.full(10, 2.0), np.full(10, 8.0)] + np.random.default_rng(0).normal(0, 0.1, 20)
    res = moran_permutation_test(x, two_cliques(), n_perm=999, seed=1)
    assert res.p_value <= 0.01
    assert res.n_perm == 999


def test_permutation_p_by_direct_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(12)
    w = cycle(12)
    res = moran_permutation_test(x, w, n_perm=300, seed=5)
    # replay the generator and count permutations directly
    gen = np.random.default_rng(5)
    z = x - x.mean()
    perms = gen.permuted(np.tile(z, (256, 1)), axis=1)
    perms = np.vstack([perms, gen.permuted(np.tile(z, (44, 1)), axis=1)])
    stats_ = [moran_oracle(list(p), w.w.tolist()) for p in perms]
    hits = sum(s >= res.I - 1e-12 * abs(res.I) for s in stats_)
    assert res.p_value == (1 + hits) / 301


def test_permutation_boundaries_and_determinism():
    x = np.random.default_rng(3).standard_normal(8)
    for seed in range(10):
        assert moran_permutation_test(x, cycle(8), n_perm=1, seed=seed).p_value in (0.5, 1.0)
    a = moran_permutation_test(x, cycle(8), n_perm=200, seed=4)
    b = moran_permutation_test(x, cycle(8), n_perm=200, seed=4)
    assert a == b and 0 < a.p_value <= 1


def test_haversine_known_distance():
    # a quarter of the equator
    assert haversine_km(0.0, 0.0, 0.0, 90.0) == pytest.approx(math.pi * 6371.0 / 2, rel=1e-12)


def test_knn_tie_break_collinear():
    w = build_knn_weights(np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]]), k=1)
    assert w.w[1].tolist() == [1.0, 0.0, 0.0]


def test_knn_saturation():
    c = np.random.default_rng(4).uniform(-40, 40, size=(6, 2))
    assert np.array_equal(build_knn_weights(c, k=5).w, 1 - np.eye(6))


def test_knn_brute_force_oracle():
    rng = np.random.default_rng(5)
    c = np.column_stack([rng.uniform(-80, 80, 20), rng.uniform(-180, 180, 20)])
    w = build_knn_weights(c, k=3)
    for i in range(20):
        d = sorted((float(haversine_km(c[i, 0], c[i, 1], c[j, 0], c[j, 1])), j) for j in range(20) if j != i)
        want = np.zeros(20)
        want[[j for _, j in d[:3]]] = 1
        assert np.array_equal(w.w[i], want)


def test_knn_bad_k():
    with pytest.raises(ValueError):
        build_knn_weights(np.zeros((3, 2)), k=3)


def test_load_adjacency_and_centroids(tmp_path):
    p = tmp_path / "adj.csv"
    p.write_text("from,to\nA,B\nB,A\nB,C\nC,B\nC,ZZ\n")
    w = load_adjacency(p, ("A", "B", "C"))
    assert w.w.tolist() == [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    assert w.subset(("C", "B")).w.tolist() == [[0, 1], [1, 0]]
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n")
    with pytest.raises(ParseError):
        load_adjacency(bad, ("A",))
    cp = tmp_path / "cent.csv"
    cp.write_text("id,lat,lon\nA,1.5,2\nB,-3,4.25\n")
    ids, xy = load_centroids(cp)
    assert ids == ("A", "B") and xy.tolist() == [[1.5, 2.0], [-3.0, 4.25]]
    cp.write_text("id,lat,lon\nA,north,2\n")
    with pytest.raises(ParseError) as err:
        load_centroids(cp)
    assert err.value.line == 2


def ecdf_oracle(a, b):
    pts = sorted(set(a) | set(b))
    F = lambda s, x: sum(v <= x for v in s) / len(s)
    return max(abs(F(a, x) - F(b, x)) for x in pts)


def test_ks_cases():
    assert ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])[0] == 0.0
    rng = np.random.default_rng(6)
    D, p = ks_two_sample(rng.random(30), rng.random(40) + 2)
    assert D == 1.0 and p < 1e-6
    a, b = rng.standard_normal(100), rng.standard_normal(100)
    assert ks_two_sample(a, b)[0] == pytest.approx(ecdf_oracle(list(a), list(b)), abs=1e-15)
    with pytest.raises(EmptySample):
        ks_two_sample([], [1.0])


def test_ks_ties_and_pvalue():
    a = [1, 1, 2, 2, 3, 3, 3]
    b = [1, 2, 2, 2, 4]
    D, p = ks_two_sample(a, b)
    assert D == pytest.approx(ecdf_oracle(a, b), abs=1e-15)
    ne = 7 * 5 / 12
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * D
    series = 2 * sum((-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam) for k in range(1, 200))
    assert p == pytest.approx(min(1.0, max(0.0, series)), abs=1e-12)


@given(st.integers(0, 10_000))
def test_ks_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(25), rng.standard_normal(31) + 0.3
    assert ks_two_sample(np.exp(a), np.exp(b)) == ks_two_sample(a, b)
