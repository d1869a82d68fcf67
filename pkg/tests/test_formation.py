import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.sparse import csgraph
from scipy.stats import logistic

from conftest import dyadic_spec, strategic_spec
from stratnet.errors import NeighborhoodTooLarge, NonConvergence, TooLarge
from stratnet.formation import (
    RobustnessDecomposition, classify_robustness, draw_node_count, enumerate_pairwise_stable,
    form_dyadic_initial, generate, roll_forward, simulate, solve_pairwise_stable,
    stability_violations, strategic_neighborhoods,
)
from stratnet.model import LatentParams, ModelSpec, Primitives, SparsityScale, ShockLaw, eval_latent, sample_primitives
from stratnet.network import Net


def pinned(spec, ids, zeta, X=None):
    X = np.full((len(ids), spec.d), 0.5) if X is None else X
    return Primitives.pinned(spec, ids, X, zeta)


def instance(spec, n, seed, scale_n=None):
    prims = sample_primitives(spec, np.arange(n), seed)
    return prims, SparsityScale.from_spec(spec, scale_n or n)


# -- dyadic initial condition ---------------------------------------------------


def test_single_node_is_empty():
    spec = dyadic_spec()
    prims, scale = instance(spec, 1, 0)
    assert form_dyadic_initial(spec, prims, scale).n_edges == 0


def test_threshold_dominance_gives_empty_network():
    spec = dyadic_spec(kappa=50.0, v0_params=LatentParams((), (), -1e6), shock_law=ShockLaw("logistic"))
    prims, scale = instance(spec, 1500, 3, scale_n=10)  # ~1.1e6 pairs, all within reach
    assert form_dyadic_initial(spec, prims, scale).n_edges == 0


def test_dyadic_matches_per_pair_threshold():
    spec = dyadic_spec(v0_params=LatentParams((), (), 0.2))
    X = np.array([[0.1], [0.5], [0.52]])
    prims = pinned(spec, [0, 1, 2], {(0, 1, 0): 0.0, (0, 2, 0): 2.0, (1, 2, 0): -0.3}, X)
    scale = SparsityScale.from_spec(spec, 3)
    expect = set()
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        dist = abs(X[a, 0] - X[b, 0]) / scale.r
        v = 0.2 - dist + prims.zeta([a], [b], 0)[0]
        if v > 0:
            expect.add((a, b))
    assert form_dyadic_initial(spec, prims, scale).edge_set() == expect
    assert expect  # at least one link forms and one does not
    assert len(expect) < 3


# -- robustness -------------------------------------------------------------------


def test_no_strategic_effect_means_no_D():
    spec = strategic_spec(b0=0.0, kappa=3.0)
    prims, scale = instance(spec, 80, 1)
    dec = classify_robustness(spec, prims, scale)
    assert dec.D.n_edges == 0
    assert dec.M0.same_graph(dec.robust)


def test_two_nodes_non_robust_by_construction():
    spec = strategic_spec(T=0, b0=1.0, intercept=0.0)
    # both nodes at the same point: index = zeta + beta.s, beta.s in [0, 2]
    prims = pinned(spec, [1, 2], {(1, 2, 0): -1.0})
    dec = classify_robustness(spec, prims, SparsityScale.from_spec(spec, 2))
    assert dec.D.edge_set() == {(1, 2)}
    assert dec.robust.n_edges == 0


def test_four_node_period0_analog_is_non_robust(four_node_case):
    # move the four_node_case's period-1 design to period 0: (1,2) links iff it has a common neighbour
    spec, prims, _ = four_node_case
    spec0 = spec.with_(v0_params=spec.v_params)
    zeta = {(a, b, 0): prims.zeta([a], [b], 0)[0] for a in range(1, 5) for b in range(a + 1, 5)}
    zeta[(1, 2, 0)] = -1.0
    p0 = pinned(spec0, [1, 2, 3, 4], zeta)
    dec = classify_robustness(spec0, p0, SparsityScale.from_spec(spec0, 4))
    assert (1, 2) in dec.D.edge_set()
    A0 = solve_pairwise_stable(spec0, p0, SparsityScale.from_spec(spec0, 4))
    assert A0.edge_set() == {(1, 2), (1, 3), (2, 3)}


def _decomp(ids, d_edges, r_edges):
    D = Net.from_edges(ids, d_edges)
    R = Net.from_edges(ids, r_edges)
    return RobustnessDecomposition(Net.from_edges(ids, d_edges + r_edges), R, D)


def test_strategic_neighborhoods_cases():
    ids = [1, 2, 3, 4]
    assert strategic_neighborhoods(_decomp(ids, [], [])) == [{1}, {2}, {3}, {4}]
    plus = strategic_neighborhoods(_decomp(ids, [(1, 2), (2, 3)], []))
    assert plus[0] == {1, 2, 3} and plus[3] == {4}
    plus = strategic_neighborhoods(_decomp(ids, [], [(1, 2)]))
    assert plus[0] == {1, 2} and plus[2] == {3}
    plus = strategic_neighborhoods(_decomp(ids, [(1, 2)], [(2, 4)]))
    assert plus[0] == {1, 2, 4} and plus[3] == {2, 4}


# -- pairwise stability -------------------------------------------------------------


def test_zero_strategic_effect_equals_dyadic():
    spec = strategic_spec(b0=0.0, kappa=3.0)
    prims, scale = instance(spec, 200, 4)
    assert solve_pairwise_stable(spec, prims, scale).same_graph(form_dyadic_initial(spec, prims, scale))


@pytest.mark.parametrize("s_kind", ["lagged_link_and_common_max", "common_neighbor_max", "lagged_link_and_common_count"])
def test_solver_output_is_an_enumerated_equilibrium(s_kind):
    # brute-force oracle membership, 500 instances spread over three statistic kinds
    reps = {"lagged_link_and_common_max": 200, "common_neighbor_max": 150, "lagged_link_and_common_count": 150}[s_kind]
    informative = 0
    for seed in range(reps):
        n = 3 + seed % 4
        spec = strategic_spec(T=0, kappa=3.0, b0=1.0 + (seed % 3) * 0.5, s_kind=s_kind)
        prims, scale = instance(spec, n, seed)
        A0 = solve_pairwise_stable(spec, prims, scale)
        oracle = enumerate_pairwise_stable(spec, prims, scale)
        assert any(A0.same_graph(o) for o in oracle), seed
        assert stability_violations(spec, prims, scale, A0) == 0
        informative += len(oracle) > 1
    assert informative > reps // 4


def test_solver_is_the_least_equilibrium():
    # monotone best response from the robust net reaches the minimal fixed point
    for seed in range(60):
        spec = strategic_spec(T=0, kappa=3.0, b0=1.5)
        prims, scale = instance(spec, 5, seed)
        A0 = solve_pairwise_stable(spec, prims, scale).edge_set()
        assert all(A0 <= o.edge_set() for o in enumerate_pairwise_stable(spec, prims, scale))


def test_non_monotone_enumerate_is_an_equilibrium():
    spec = strategic_spec(T=0, kappa=3.0, b0=1.0).with_(v0_params=LatentParams((1.0, -0.4), (), -0.5))
    assert not spec.monotone
    checked = 0
    for seed in range(80):
        prims, scale = instance(spec, 5, seed)
        oracle = enumerate_pairwise_stable(spec, prims, scale)
        if not oracle:
            with pytest.raises(NonConvergence):
                solve_pairwise_stable(spec, prims, scale)
            continue
        A0 = solve_pairwise_stable(spec, prims, scale)
        assert any(A0.same_graph(o) for o in oracle)
        checked += 1
    assert checked > 40


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 120), st.floats(0.1, 2.0))
def test_solver_methods_agree(seed, n, b0):
    spec = strategic_spec(T=0, kappa=2.0, b0=b0)
    prims, scale = instance(spec, n, seed)
    lat = solve_pairwise_stable(spec, prims, scale, method="lattice")
    assert lat.same_graph(solve_pairwise_stable(spec, prims, scale, method="sweep"))
    assert stability_violations(spec, prims, scale, lat) == 0
    if classify_robustness(spec, prims, scale).D.n_edges <= 15:
        assert lat.same_graph(solve_pairwise_stable(spec, prims, scale, method="enumerate"))


def test_decentralization_exact():
    spec = strategic_spec(T=0, kappa=2.0, b0=1.0)
    prims, scale = instance(spec, 300, 9)
    full = solve_pairwise_stable(spec, prims, scale)
    dec = classify_robustness(spec, prims, scale)
    plus = strategic_neighborhoods(dec)
    _, labels = csgraph.connected_components(dec.D.adjacency, directed=False)
    ids = prims.node_ids
    nontrivial = 0
    for a in range(0, len(ids), 7):
        C = set(ids[labels == labels[a]].tolist())
        sub = prims.subset(sorted(plus[a]))
        local = solve_pairwise_stable(spec, sub, scale)

        def touching(net):
            return {e for e in net.subnet(plus[a]).edge_set() if e[0] in C or e[1] in C}

        assert touching(local) == touching(full)
        nontrivial += len(C) > 1
    assert nontrivial > 5


def test_lagged_self_reference_has_no_equilibrium():
    spec = ModelSpec(d=1, T=0, kappa=1.0, s_kind="lagged_link",
                     v_params=LatentParams((0.0,)), v0_params=LatentParams((-2.0,)))
    prims = pinned(spec, [1, 2], {(1, 2, 0): 1.0})
    scale = SparsityScale.from_spec(spec, 2)
    assert enumerate_pairwise_stable(spec, prims, scale) == []
    for method in ("enumerate", "sweep"):
        with pytest.raises(NonConvergence):
            solve_pairwise_stable(spec, prims, scale, method=method)


def test_large_neighborhood_refuses_enumeration():
    spec = strategic_spec(T=0, kappa=30.0, b0=3.0)
    prims, scale = instance(spec, 60, 0)
    assert classify_robustness(spec, prims, scale).D.n_edges > 20
    with pytest.raises(NeighborhoodTooLarge):
        solve_pairwise_stable(spec, prims, scale, method="enumerate")


# -- enumeration oracle ---------------------------------------------------------------


def test_enumerate_without_strategic_effects_is_unique():
    spec = strategic_spec(T=0, kappa=3.0, b0=0.0)
    prims, scale = instance(spec, 5, 2)
    out = enumerate_pairwise_stable(spec, prims, scale)
    assert len(out) == 1 and out[0].same_graph(form_dyadic_initial(spec, prims, scale))


def test_enumerate_all_robust_is_unique():
    spec = ModelSpec(d=1, T=0, kappa=1.0, s_kind="common_neighbor_max",
                     v_params=LatentParams((0.0,)), v0_params=LatentParams((1.0,)))
    zeta = {(1, 2, 0): 5.0, (1, 3, 0): 5.0, (2, 3, 0): -5.0}
    prims = pinned(spec, [1, 2, 3], zeta)
    scale = SparsityScale.from_spec(spec, 3)
    out = enumerate_pairwise_stable(spec, prims, scale)
    assert len(out) == 1 and out[0].edge_set() == {(1, 2), (1, 3)}


def test_enumerate_two_equilibria_by_hand():
    # (1,2) robust; (1,3) and (2,3) form iff they share a neighbour, which each
    # supplies to the other: either both or neither
    spec = ModelSpec(d=1, T=0, kappa=1.0, s_kind="common_neighbor_max",
                     v_params=LatentParams((0.0,)), v0_params=LatentParams((2.0,)))
    zeta = {(1, 2, 0): 5.0, (1, 3, 0): -1.0, (2, 3, 0): -1.0}
    prims = pinned(spec, [1, 2, 3], zeta)
    scale = SparsityScale.from_spec(spec, 3)
    out = sorted(enumerate_pairwise_stable(spec, prims, scale), key=lambda n: n.n_edges)
    assert [o.edge_set() for o in out] == [{(1, 2)}, {(1, 2), (1, 3), (2, 3)}]
    assert solve_pairwise_stable(spec, prims, scale).edge_set() == {(1, 2)}


def test_enumerate_refuses_large():
    spec = strategic_spec(T=0)
    prims, scale = instance(spec, 7, 0)
    with pytest.raises(TooLarge):
        enumerate_pairwise_stable(spec, prims, scale)


# -- dynamics ---------------------------------------------------------------------------


def test_T0_series_is_initial_network():
    spec = strategic_spec(T=0, kappa=2.0)
    prims, scale = instance(spec, 50, 1)
    series = generate(spec, prims, scale)
    assert series.T == 0
    assert series[0].same_graph(solve_pairwise_stable(spec, prims, scale))


def test_four_node_period1_is_single_link(four_node_case):
    spec, prims, scale = four_node_case
    series = generate(spec, prims, scale)
    assert series[0].edge_set() == {(1, 3), (2, 3)}
    assert series[1].edge_set() == {(1, 2)}


def test_negative_intercept_empties_later_periods():
    spec = strategic_spec(T=3, kappa=3.0, b=0.0).with_(v_params=LatentParams((0.0, 0.0), (), -1e6))
    prims, scale = instance(spec, 100, 5)
    series = generate(spec, prims, scale)
    assert series[0].n_edges > 0
    assert all(series[t].n_edges == 0 for t in range(1, 4))


def test_roll_forward_matches_direct_evaluation():
    spec = strategic_spec(T=2, kappa=2.0, b0=0.5, b=1.0)
    prims, scale = instance(spec, 40, 8)
    series = generate(spec, prims, scale)
    ids = prims.node_ids
    for t in (1, 2):
        A = series[t - 1].dense().astype(int)
        C = A @ A
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                s = np.array([A[a, b], min(C[a, b], 1)], dtype=float)
                d = abs(prims.X[a, 0] - prims.X[b, 0]) / scale.r
                v = eval_latent(spec, "V", d, s, prims.Z[a, t], prims.Z[b, t], prims.zeta([ids[a]], [ids[b]], t)[0])
                assert (v > 0) == series[t].has_edge(ids[a], ids[b])


def test_roll_forward_markov_in_previous_period():
    spec = strategic_spec(T=1, kappa=2.0)
    prims, scale = instance(spec, 60, 2)
    other = Net.from_edges(prims.node_ids, [(0, 1), (2, 3), (1, 3)])
    s1 = roll_forward(spec, prims, scale, other)
    s2 = roll_forward(spec, prims, scale, Net.from_edges(prims.node_ids, [(3, 2), (1, 0), (3, 1)]))
    assert s1.same_series(s2)


# -- full pipeline ------------------------------------------------------------------------


def test_poisson_node_count_mean():
    n, reps = 50, 10_000
    draws = np.array([draw_node_count(n, True, s) for s in range(reps)])
    assert abs(draws.mean() - n) < 2 * np.sqrt(n / reps)
    assert draw_node_count(n, False, 3) == n


def test_simulate_single_node():
    spec = strategic_spec(T=2)
    prims, series = simulate(spec, 1, seed=0)
    assert series.n == 1 and all(net.n_edges == 0 for net in series.nets)


def test_simulate_deterministic_and_stable():
    spec = strategic_spec(T=2, kappa=2.0, b0=0.5)
    p1, s1 = simulate(spec, 400, seed=12)
    p2, s2 = simulate(spec, 400, seed=12)
    assert s1.same_series(s2)
    assert stability_violations(spec, p1, SparsityScale.from_spec(spec, 400), s1[0]) == 0


def test_mean_degree_stable_in_n():
    spec = dyadic_spec(kappa=2.0, v0_params=LatentParams((), (), 0.0))
    means = []
    for n in (250, 1000, 4000):
        reps = 40_000 // n
        means.append(np.mean([simulate(spec, n, seed=s)[1][0].degree().mean() for s in range(reps)]))
    # limit: kappa * 2 * integral_0^inf P(zeta > u) du for d = 1 (standard logistic)
    limit = 2.0 * 2 * quad(logistic.sf, 0, np.inf)[0]
    assert limit == pytest.approx(4 * np.log(2))
    assert max(means) - min(means) < 0.1 * limit
    assert abs(means[-1] - limit) < 0.05 * limit
