import numpy as np
import pytest

from conftest import dyadic_spec, strategic_spec
from stratnet.errors import ContractViolation, InsufficientData
from stratnet.formation import generate
from stratnet.model import LatentParams, ModelSpec, ShockLaw, SparsityScale, eval_latent_extremes, sample_primitives
from stratnet.moments import StatSpec, compute_stat, dynamic_kneigh
from stratnet.stabilization import (
    build_M_networks, construct_Ji, distance_only_limit, j_simple, radius, regrow, sparsity_check,
    stabilization_report, tail_fit, verify_stabilization,
)


def instance(spec, n, seed):
    return sample_primitives(spec, np.arange(n), seed), SparsityScale.from_spec(spec, n)


# -- independent oracle for the J_i recursion -------------------------------------------


def _dense_extremes(spec, prims, scale):
    """Per-period (inf, sup) index matrices, pair by pair."""
    n, ids = len(prims), prims.node_ids
    out = []
    for t in range(spec.T + 1):
        which = "V0" if t == 0 else "V"
        lo, hi = np.full((n, n), -np.inf), np.full((n, n), -np.inf)
        for a in range(n):
            for b in range(a + 1, n):
                d = np.linalg.norm(prims.X[a] - prims.X[b]) / scale.r
                z = prims.zeta([ids[a]], [ids[b]], t)[0]
                lo[a, b], hi[a, b] = eval_latent_extremes(spec, which, d, prims.Z[a, t], prims.Z[b, t], z)
                lo[b, a], hi[b, a] = lo[a, b], hi[a, b]
        out.append((lo, hi))
    return out


def _nbhd(M, srcs, K):
    seen = set(srcs)
    frontier = set(srcs)
    for _ in range(K):
        frontier = {int(b) for a in frontier for b in np.flatnonzero(M[a])} - seen
        seen |= frontier
    return seen


def oracle_J(spec, prims, scale, nodes, K):
    """{i: J_i} for each i in ``nodes``."""
    ext = _dense_extremes(spec, prims, scale)
    M = [hi > 0 for _, hi in ext]
    robust = ext[0][0] > 0
    D = M[0] & ~robust
    n = len(prims)

    def c_plus(j):
        comp = _nbhd(D, {j}, n)
        return comp | {int(k) for c in comp for k in np.flatnonzero(robust[c])}

    def m_set(j, t):
        R = _nbhd(M[t], {j}, K) if t > 0 else None
        if t == 0:
            return set().union(*(c_plus(k) for k in _nbhd(M[0], {j}, K)))
        acc = set(R)
        for s in range(t - 1, 0, -1):
            R = _nbhd(M[s], R, 1)
            acc |= R
        return acc | set().union(*(c_plus(k) for k in R))

    out = {}
    for i in nodes:
        a = int(prims.index([i])[0])
        first = set().union(*(_nbhd(M[t], {a}, K) for t in range(spec.T + 1)))
        J = set().union(*(m_set(j, t) for j in first for t in range(spec.T + 1)))
        out[i] = set(prims.node_ids[sorted(J)].tolist())
    return out


# -- M networks ---------------------------------------------------------------------------


def test_M_empty_for_negative_intercept():
    spec = strategic_spec(T=2, intercept=-1e6)
    prims, scale = instance(spec, 50, 0)
    M, union = build_M_networks(spec, prims, scale)
    assert union.n_edges == 0 and all(m.n_edges == 0 for m in M)
    assert construct_Ji(spec, prims, scale, 7) == {7}


def test_realized_links_inside_M():
    spec = strategic_spec(T=3, kappa=2.0, b0=0.5)
    prims, scale = instance(spec, 300, 1)
    series = generate(spec, prims, scale)
    M, union = build_M_networks(spec, prims, scale)
    for t in range(4):
        assert series[t].edge_set() <= M[t].edge_set() <= union.edge_set()


def test_M_matches_corner_evaluation():
    spec = strategic_spec(T=1, kappa=3.0, b0=0.4, b=0.8)
    prims, scale = instance(spec, 3, 2)
    M, _ = build_M_networks(spec, prims, scale)
    for t, (_, hi) in enumerate(_dense_extremes(spec, prims, scale)):
        expect = {(a, b) for a in range(3) for b in range(a + 1, 3) if hi[a, b] > 0}
        assert M[t].edge_set() == expect


# -- J_i -------------------------------------------------------------------------------------


def test_four_node_naive_and_corrected_sets(four_node_case):
    spec, prims, scale = four_node_case
    series = generate(spec, prims, scale)
    naive = series[1].neighborhood(1, 1)
    assert naive == {1, 2}
    full, part, equal = verify_stabilization(spec, prims, scale, 1, stat="degree:t=1", J=naive)
    assert (full[0], part[0], equal) == (1.0, 0.0, False)
    assert j_simple(series, 1) == {1, 2, 3}
    full, part, equal = verify_stabilization(spec, prims, scale, 1, stat="degree:t=1", J={1, 2, 3})
    assert (full[0], part[0], equal) == (1.0, 1.0, True)
    J1 = construct_Ji(spec, prims, scale, 1)
    assert J1 >= {1, 2, 3}
    assert verify_stabilization(spec, prims, scale, 1, stat="degree:t=1", J=J1)[2]


def test_j_simple_needs_two_periods():
    spec = dyadic_spec()
    prims, scale = instance(spec, 5, 0)
    with pytest.raises(ContractViolation):
        j_simple(generate(spec, prims, scale), 0)


@pytest.mark.parametrize("T,K,b0", [(0, 1, 1.0), (1, 1, 0.0), (2, 1, 0.8), (3, 2, 0.6)])
def test_J_matches_hand_recursion(T, K, b0):
    spec = strategic_spec(T=T, kappa=3.0, b0=b0, b=1.0)
    for seed in range(4):
        prims, scale = instance(spec, 6 if seed < 2 else 30, seed)
        nodes = prims.node_ids[:6].tolist()
        expect = oracle_J(spec, prims, scale, nodes, K)
        for i in nodes:
            assert construct_Ji(spec, prims, scale, i, K) == expect[i]


def test_J_contains_dynamic_neighbourhood():
    spec = strategic_spec(T=2, kappa=2.0, b0=0.5)
    prims, scale = instance(spec, 150, 3)
    series = generate(spec, prims, scale)
    for i in range(0, 150, 10):
        for K in (1, 2):
            assert dynamic_kneigh(series, i, K) <= construct_Ji(spec, prims, scale, i, K)


def test_K_must_be_positive():
    spec = strategic_spec()
    prims, scale = instance(spec, 10, 0)
    with pytest.raises(ContractViolation):
        construct_Ji(spec, prims, scale, 0, K=0)


# -- radius ------------------------------------------------------------------------------------


def test_radius_cases():
    spec = dyadic_spec(d=2)
    prims, scale = instance(spec, 20, 0)
    assert radius(prims, scale, 3, {3}) == 0.0
    X = prims.X
    expect = np.linalg.norm(X[3] - X[8]) / scale.r
    assert radius(prims, scale, 3, {3, 8}) == pytest.approx(expect)
    assert radius(prims, scale, 3, {3, 8}) <= radius(prims, scale, 3, {3, 8, 11, 15})
    with pytest.raises(ContractViolation):
        radius(prims, scale, 3, {8})


def test_radius_arithmetic():
    from stratnet.model import Primitives
    spec = dyadic_spec()
    scale = SparsityScale.from_spec(spec, 10)  # r = 0.1
    prims = Primitives.pinned(spec, [0, 1], np.array([[0.1], [0.47]]), {})
    assert radius(prims, scale, 0, {0, 1}) == pytest.approx(3.7)


# -- exactness on random instances -------------------------------------------------------------


@pytest.mark.parametrize("T,b0", [(1, 0.0), (1, 0.3), (3, 0.3)])
def test_verify_random_instances(T, b0):
    spec = strategic_spec(T=T, kappa=1.0, b0=b0, b=1.0)
    stats = ["degree", "triangle", "asf:s_target=1/0"] + (["graham:theta=0.5/0.5"] if T >= 3 else [])
    for seed in range(3):
        prims, scale = instance(spec, 60 + 40 * seed, seed)
        rep = stabilization_report(spec, prims, scale, stats=stats)
        assert rep.failures == 0
        assert all(r.verified for r in rep.records)


def test_single_verify_reports_values():
    spec = strategic_spec(T=1, kappa=1.0)
    prims, scale = instance(spec, 80, 4)
    full, part, eq = verify_stabilization(spec, prims, scale, 5, stat="triangle")
    assert eq and np.array_equal(full, part)


def test_regrow_uses_subset_primitives():
    spec = strategic_spec(T=1, kappa=1.0)
    prims, scale = instance(spec, 40, 5)
    sub, series = regrow(spec, prims, scale, {3, 1, 2})
    assert sub.node_ids.tolist() == [1, 2, 3]
    assert np.array_equal(sub.X, prims.X[1:4])


def test_report_csv_and_summary():
    spec = strategic_spec(T=1, kappa=1.0)
    prims, scale = instance(spec, 30, 0)
    rep = stabilization_report(spec, prims, scale, nodes=[0, 1, 2])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "node,J_size,radius,verified" and len(lines) == 4
    assert rep.summary()["failures"] == 0 and rep.summary()["nodes"] == 3
    r = rep.records[0]
    assert r.node in r.J and r.J_size == len(r.J)


def test_tails_at_scale():
    spec = strategic_spec(T=1, kappa=1.0, b0=0.3, b=1.0)
    prims, scale = instance(spec, 2000, 11)
    rep = stabilization_report(spec, prims, scale, verify=False, fit_tails=True)
    for fit in (rep.size_fit, rep.radius_fit):
        assert fit.exponential_tail, fit.slope_ci
        assert np.all(np.diff(fit.log_survival) <= 0)


# -- tail fits ---------------------------------------------------------------------------------


def test_tail_fit_exponential():
    x = np.random.default_rng(0).exponential(0.5, 100_000)
    fit = tail_fit(x)
    assert fit.slope == pytest.approx(-2.0, abs=0.1)
    assert fit.exponential_tail


def test_tail_fit_geometric():
    p = 0.3
    x = np.random.default_rng(1).geometric(p, 100_000)
    fit = tail_fit(x)
    assert fit.slope == pytest.approx(np.log(1 - p), abs=0.05)


def test_tail_fit_constant_and_small():
    assert tail_fit(np.full(600, 3.0)).degenerate
    with pytest.raises(InsufficientData):
        tail_fit(np.ones(499))


# -- sparsity ----------------------------------------------------------------------------------


def pure_distance(kappa=1.0, intercept=0.0):
    return ModelSpec(d=1, T=0, kappa=kappa, v0_params=LatentParams((), (), intercept),
                     shock_law=ShockLaw("exponential"))


def test_distance_only_limit_closed_form():
    assert distance_only_limit(pure_distance()) == pytest.approx(2.0, abs=1e-8)
    assert distance_only_limit(pure_distance(kappa=2.5)) == pytest.approx(5.0, abs=1e-8)
    assert distance_only_limit(strategic_spec(b0=0.5)) is None


def test_sparsity_check_pure_distance():
    res = sparsity_check(pure_distance(), [250, 1000, 4000], reps=10, seed=0)
    assert res.limit == [pytest.approx(2.0)]
    assert np.all(np.abs(res.mean_degree[:, 0] - 2.0) < 0.2)
    assert abs(res.trend_t[0]) < 3


def test_sparsity_negative_intercept():
    res = sparsity_check(pure_distance(intercept=-40.0), [100, 200], reps=3)
    assert np.all(res.mean_degree == 0)
    with pytest.raises(ContractViolation):
        sparsity_check(pure_distance(), [200, 100], reps=1)
