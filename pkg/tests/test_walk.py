import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from walklab.generators import (ExpanderSpec, lattice_distance, random_regular_expander, standard_graph,
                                subdivide)
from walklab.graph import Graph, GraphError, RootedGraph, VertexSubset, all_pairs_distances, bfs_distances
from walklab.walk import (CapError, DistributionVector, MixingError, RestrictedWalk, conditional_entropy,
                          dense_transition, entropy, escape_statistics, exact_pushforward, hitting_time_max,
                          hitting_times, joint_entropy, mean_square_displacement, mixing_time_tv,
                          msd_from_starts, restricted_transition, sample_trajectories, simulate,
                          stationary_measure, weighted_stationary_msd)


def naive_transition(g: Graph, members) -> np.ndarray:
    """Restricted walk matrix built entry by entry from the definition."""
    members = list(members)
    pos = {v: i for i, v in enumerate(members)}
    P = np.zeros((len(members), len(members)))
    for v in members:
        nb = g.neighbors(v).tolist()
        for u in nb:
            if u in pos:
                P[pos[v], pos[u]] += 1 / len(nb)
        P[pos[v], pos[v]] += sum(1 for u in nb if u not in pos) / len(nb) if nb else 1.0
    return P


# ----------------------------------------------------------- exact laws

def test_restricted_transition_examples():
    p3 = standard_graph("path", 3)
    single = RestrictedWalk(p3, VertexSubset.from_vertices(p3, [1]))
    assert restricted_transition(single, 1).as_dict() == {1: 1.0}
    full = RestrictedWalk(p3)
    assert restricted_transition(full, 1).as_dict() == {0: 0.5, 2: 0.5}
    ab = RestrictedWalk(p3, VertexSubset.from_vertices(p3, [0, 1]))
    assert restricted_transition(ab, 1).as_dict() == {0: 0.5, 1: 0.5}
    with pytest.raises(GraphError):
        restricted_transition(ab, 2)


def test_stationary_measure_examples():
    t = standard_graph("torus", 5, 5)
    assert np.allclose(stationary_measure(RestrictedWalk(t)).probabilities, 1 / 25, atol=1e-15)
    p3 = standard_graph("path", 3)
    assert np.allclose(stationary_measure(RestrictedWalk(p3)).probabilities, [0.25, 0.5, 0.25])
    c8 = standard_graph("cycle", 8)
    w = RestrictedWalk(c8, VertexSubset.from_vertices(c8, [1, 2, 3, 4, 5]))
    pi = stationary_measure(w).probabilities
    P = naive_transition(c8, w.members)
    assert np.max(np.abs(pi @ P - pi)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.randoms(use_true_random=False))
def test_detailed_balance_and_rows_exhaustive(n, rnd):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    g = Graph.from_edges(n, rnd.sample(pairs, rnd.randint(0, min(len(pairs), 3 * n))))
    members = sorted(rnd.sample(range(n), rnd.randint(1, n)))
    S = VertexSubset.from_vertices(g, members)
    w = RestrictedWalk(g, S)
    P = dense_transition(w)
    assert np.allclose(P, naive_transition(g, members), atol=1e-15)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    if S.mu == 0:
        return
    pi = w.stationary_weights
    assert np.allclose(pi, g.degrees[members] / S.mu, atol=1e-15)
    F = pi[:, None] * P
    assert np.max(np.abs(F - F.T)) <= 1e-12


def test_detailed_balance_on_large_subset():
    g = standard_graph("grid", 40, 40)
    rng = np.random.default_rng(3)
    S = VertexSubset.from_vertices(g, rng.choice(g.n, 1000, replace=False))
    w = RestrictedWalk(g, S)
    P = w.transition
    F = P.multiply(w.stationary_weights[:, None])
    assert abs(F - F.T).max() <= 1e-12


def test_exact_pushforward_examples():
    c4 = standard_graph("cycle", 4)
    w = RestrictedWalk(c4)
    init = DistributionVector.point(w, 0)
    assert exact_pushforward(w, init, 0).as_dict() == {0: 1.0}
    two = exact_pushforward(w, init, 2).as_dict(tol=1e-15)
    assert two == pytest.approx({0: 0.5, 2: 0.5}, abs=1e-15)
    g = standard_graph("grid", 6, 7)
    S = VertexSubset.from_vertices(g, range(0, 30))
    ws = RestrictedWalk(g, S)
    pi = stationary_measure(ws)
    for t in (1, 5, 17):
        out = exact_pushforward(ws, pi, t).probabilities
        assert np.max(np.abs(out - pi.probabilities)) <= 1e-12
        point = exact_pushforward(ws, DistributionVector.point(ws, 3), t).probabilities
        assert abs(point.sum() - 1.0) <= 1e-12


def test_pushforward_cap_refusal():
    g = standard_graph("path", 50)
    w = RestrictedWalk(g)
    with pytest.raises(CapError):
        exact_pushforward(w, DistributionVector.point(w, 0), 3, cap=10)


def test_coupling_property_deep_inside_subset():
    g = standard_graph("grid", 21, 21)
    center = 10 * 21 + 10
    d = bfs_distances(g, center)
    S = VertexSubset.from_mask(g, (d >= 0) & (d <= 8))
    restricted = RestrictedWalk(g, S)
    simple = RestrictedWalk(g)
    t = 4
    for x in (center, center + 2, center - 21 * 3):
        # B_x(t) stays at distance >= 1 from the complement, so no step can be blocked
        assert bfs_distances(g, x, radius=t)[~S.mask].max() < 0
        a = exact_pushforward(restricted, DistributionVector.point(restricted, x), t).dense()
        b = exact_pushforward(simple, DistributionVector.point(simple, x), t).dense()
        assert np.max(np.abs(a - b)) <= 1e-15
    # a start near the edge of S does see the holding
    edge = int(np.flatnonzero(d == 8)[0])
    a = exact_pushforward(restricted, DistributionVector.point(restricted, edge), t).dense()
    b = exact_pushforward(simple, DistributionVector.point(simple, edge), t).dense()
    assert np.max(np.abs(a - b)) > 1e-3


# ------------------------------------------------------------ Monte Carlo

def test_singleton_trajectories_are_constant():
    g = standard_graph("path", 5)
    w = RestrictedWalk(g, VertexSubset.from_vertices(g, [2]))
    for tr in sample_trajectories(w, 2, 20, 5, master_seed=1):
        assert set(tr.vertices.tolist()) == {2}


def test_c4_two_step_return_frequency():
    c4 = standard_graph("cycle", 4)
    w = RestrictedWalk(c4)
    N = 100_000
    hits = 0
    for rec in simulate(w, 0, 2, np.arange(N), master_seed=5, observe=[0, 2]):
        hits += int(np.sum(rec["positions"][0] == rec["positions"][1]))
    q = hits / N
    assert abs(q - 0.5) <= 3 * math.sqrt(0.25 / N)


def test_trajectories_are_addressable_and_valid():
    g = standard_graph("grid", 9, 9)
    S = VertexSubset.from_vertices(g, range(0, 50))
    w = RestrictedWalk(g, S)
    batch = list(sample_trajectories(w, "stationary", 30, 10, master_seed=99))
    alone = next(sample_trajectories(w, "stationary", 30, 1, master_seed=99, first_index=7))
    assert np.array_equal(batch[7].vertices, alone.vertices)
    again = list(sample_trajectories(w, "stationary", 30, 10, master_seed=99))
    assert all(np.array_equal(a.vertices, b.vertices) for a, b in zip(batch, again))
    adj = g.adjacency
    for tr in batch:
        v = tr.vertices
        assert np.all(S.mask[v])
        moved = v[1:] != v[:-1]
        assert np.all(np.asarray(adj[v[:-1][moved], v[1:][moved]]).ravel() == 1)


def test_batch_size_does_not_change_results():
    g = standard_graph("cycle", 13)
    w = RestrictedWalk(g)
    a = np.concatenate([r["positions"][-1] for r in simulate(w, "stationary", 40, np.arange(100), 3, batch=7)])
    b = np.concatenate([r["positions"][-1] for r in simulate(w, "stationary", 40, np.arange(100), 3)])
    assert np.array_equal(a, b)


def test_empirical_law_matches_pushforward():
    g = standard_graph("grid", 5, 5)
    S = VertexSubset.from_vertices(g, [0, 1, 2, 5, 6, 7, 10, 11])
    w = RestrictedWalk(g, S)
    N = 60_000
    pos = np.concatenate([r["positions"][-1] for r in simulate(w, 6, 5, np.arange(N), 11, observe=[5])])
    exact = exact_pushforward(w, DistributionVector.point(w, 6), 5).dense()
    freq = np.bincount(pos, minlength=g.n) / N
    assert np.all(np.abs(freq - exact) <= 3 * np.sqrt(exact * (1 - exact) / N) + 1e-12)


# --------------------------------------------------------- displacement

def test_msd_examples():
    c4 = standard_graph("cycle", 4)
    assert mean_square_displacement(c4, 0, 0).value == 0.0
    for x in range(4):
        assert mean_square_displacement(c4, x, 2).value == pytest.approx(2.0, abs=1e-15)
    assert mean_square_displacement(c4, "stationary", 2).value == pytest.approx(2.0, abs=1e-12)


def test_torus_exact_vs_monte_carlo():
    t = standard_graph("torus", 16, 16)
    exact = mean_square_displacement(t, "stationary", 32).value
    mc = mean_square_displacement(t, "stationary", 32, mode="monte_carlo", count=100_000, master_seed=4,
                                  distance_fn=lattice_distance("torus", 16, 16))
    assert abs(mc.value - exact) <= 3 * mc.stderr
    assert mc.n_samples == 100_000


def test_spectral_stationary_msd_matches_pushforward_average():
    g = standard_graph("grid", 7, 8)
    S = VertexSubset.from_vertices(g, [v for v in range(g.n) if (v * 7) % 5 != 0])
    w = RestrictedWalk(g, S)
    times = [0, 1, 2, 7, 15]
    got = [e.value for e in mean_square_displacement(w, "stationary", times)]
    D2 = all_pairs_distances(g, w.members, w.members).astype(float) ** 2
    P = dense_transition(w)
    pi = w.stationary_weights
    for t, val in zip(times, got):
        Pt = np.linalg.matrix_power(P, t)
        assert val == pytest.approx(float(pi @ (Pt * D2).sum(axis=1)), abs=1e-9)
    a = (np.arange(w.size) % 3 == 0).astype(float)
    weighted = weighted_stationary_msd(w, [5], a)[0]
    P5 = np.linalg.matrix_power(P, 5)
    assert weighted == pytest.approx(float((pi * a) @ (P5 * D2).sum(axis=1)), abs=1e-9)


def test_msd_from_starts_matches_pointwise():
    g = standard_graph("grid", 9, 9)
    starts = [0, 40, 80, 13]
    vals = msd_from_starts(g, starts, 6)
    for x, v in zip(starts, vals):
        assert v == pytest.approx(mean_square_displacement(g, x, 6).value, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 25), st.randoms(use_true_random=False))
def test_msd_at_most_t_squared_and_odd_time_comparison(n, rnd):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    g = Graph.from_edges(n, rnd.sample(pairs, rnd.randint(1, min(len(pairs), 2 * n))))
    members = sorted(rnd.sample(range(n), rnd.randint(2, n)))
    w = RestrictedWalk(g, VertexSubset.from_vertices(g, members))
    if w.subset.mu == 0:
        return
    ts = list(range(0, 10))
    vals = [e.value for e in mean_square_displacement(w, "stationary", ts)]
    for t, v in zip(ts, vals):
        assert -1e-9 <= v <= t * t + 1e-9
    for t in range(1, 9, 2):
        assert vals[t] <= (math.sqrt(max(vals[t + 1], 0.0)) + 1) ** 2 + 1e-9


# ---------------------------------------------------------------- entropy

def test_entropy_examples():
    assert entropy(np.array([0.0, 1.0, 0.0])) == 0.0
    assert entropy(np.full(7, 1 / 7)) == pytest.approx(math.log(7), abs=1e-15)


@pytest.mark.parametrize("t", [2, 3, 4, 5, 6])
def test_entropy_chain_rule_c8(t):
    w = RestrictedWalk(standard_graph("cycle", 8))
    lhs = joint_entropy(w, t) - entropy(w.stationary_weights)
    assert lhs == pytest.approx(conditional_entropy(w, t - 1), abs=1e-9)


# ------------------------------------------------------ hitting / mixing

def per_target_hitting(g: Graph) -> np.ndarray:
    """Oracle: one linear system per target, h_y(y) = 0, h_y(x) = 1 + sum_z P(x,z) h_y(z)."""
    P = g.adjacency.toarray() / g.degrees[:, None]
    n = g.n
    H = np.zeros((n, n))
    for y in range(n):
        keep = np.array([v for v in range(n) if v != y])
        A = np.eye(n - 1) - P[np.ix_(keep, keep)]
        H[keep, y] = np.linalg.solve(A, np.ones(n - 1))
    return H


def test_hitting_time_examples():
    assert hitting_time_max(standard_graph("path", 2)) == pytest.approx(1.0, abs=1e-12)
    H = hitting_times(standard_graph("cycle", 4))
    assert H[0, 2] == pytest.approx(4.0, abs=1e-12)
    k4 = random_regular_expander(ExpanderSpec(n=4))
    assert hitting_time_max(k4) == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_hitting_times_match_per_target_solves(seed):
    G = nx.connected_watts_strogatz_graph(30, 4, 0.3, seed=seed)
    g = Graph.from_edges(30, list(G.edges))
    H = hitting_times(g)
    assert np.allclose(H, per_target_hitting(g), atol=1e-8)
    assert hitting_time_max(g) <= 2 * g.max_degree * g.n ** 2


def test_mixing_time_examples():
    k4 = random_regular_expander(ExpanderSpec(n=4))
    assert mixing_time_tv(k4, 0.25) == 1
    with pytest.raises(MixingError):
        mixing_time_tv(standard_graph("cycle", 4), 0.25)
    assert mixing_time_tv(standard_graph("cycle", 4), 0.25, lazy=True) >= 1


def test_expander_mixing_grows_logarithmically():
    sizes = [64, 128, 256]
    tmix = [mixing_time_tv(random_regular_expander(ExpanderSpec(n=n, seed=n)), 0.25) for n in sizes]
    c = max(t / math.log(n) for t, n in zip(tmix, sizes))
    print(f"expander t_mix(0.25) = {dict(zip(sizes, tmix))}, fitted c = {c:.3f}")
    assert all(t <= c * math.log(n) + 1e-12 for t, n in zip(tmix, sizes))
    assert c <= 10.0
    assert tmix == sorted(tmix)


# ----------------------------------------------------------------- escape

def test_escape_single_vertex_and_far_root():
    one = RootedGraph(Graph.from_edges(1, []), 0)
    s = escape_statistics(one, 10, 50, seed=1)
    assert s.root_visit_probability == 1.0 and s.escape_msd == 0.0
    cyc = standard_graph("cycle", 400)
    # starts are stationary (uniform) so restrict the claim to walks that begin far from the root
    s = escape_statistics(RootedGraph(cyc, 0), 5, 2000, seed=2)
    far = np.minimum(s.starts, 400 - s.starts) > 5
    assert far.sum() > 1000
    assert np.all(s.samples[far] == np.minimum(s.samples[far], 25.0))


def test_escape_per_start_grouping():
    g = standard_graph("cycle", 30)
    s = escape_statistics(RootedGraph(g, 0), 6, 40, seed=3, per_start=5)
    assert s.n_samples == 200
    starts, means = s.per_start_means()
    assert starts.size == 40 and means.size == 40
    assert np.all(s.starts.reshape(40, 5) == starts[:, None])


def test_stretched_expander_escape_exceeds_target():
    n = L = 64
    g = subdivide(random_regular_expander(ExpanderSpec(n=n, seed=1)), L)
    t = math.ceil(n * n * math.log(n))
    eps = 0.1
    target = (L * math.log(n)) ** 2 / 72
    s = escape_statistics(RootedGraph(g, 0), t, 60, seed=17, per_start=20)
    _, means = s.per_start_means()
    share = float(np.mean(means > target))
    print(f"escape estimate {s.escape_msd:.1f} vs target {target:.1f}; share of starts above {share:.3f}")
    assert share >= 1 - eps
