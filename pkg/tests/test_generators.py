import hashlib
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from walklab.generators import (BudgetError, ExpanderSpec, GenerationError, HkParams, build_hk, composed_size,
                                lattice_distance, random_regular_expander, root_sampler_local_limit,
                                second_eigenvalue_modulus, standard_graph, subdivide, tree_compose)
from walklab.graph import Graph, RootedGraph, all_pairs_distances, bfs_distances, diameter, sphere_counts

# accepted (n=64, degree 3, threshold 0.95) graph for this seed; sha256 of its sorted int64 edge array
EXPANDER64_SEED = 20240611
EXPANDER64_DIGEST = "70de93ba5e275e53b729e50b143738aaf41010f0a64c44183b25c02a3844b3e4"


def to_nx(g: Graph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    G.add_edges_from(g.edges.tolist())
    return G


def single_vertex(level=None):
    return RootedGraph(Graph.from_edges(1, []), 0,
                       None if level is None else np.array([level]), np.zeros(1, dtype=bool))


# ---------------------------------------------------------------- expanders

def test_expander_spec_validation():
    with pytest.raises(ValueError):
        ExpanderSpec(n=7)
    with pytest.raises(ValueError):
        ExpanderSpec(n=8, spectral_gap_threshold=1.0)


def test_n4_is_k4_with_known_spectrum():
    g = random_regular_expander(ExpanderSpec(n=4))
    assert nx.is_isomorphic(to_nx(g), nx.complete_graph(4))
    P = g.adjacency.toarray() / 3.0
    ev = np.sort(np.linalg.eigvalsh(P))
    assert np.allclose(ev, [-1 / 3, -1 / 3, -1 / 3, 1.0], atol=1e-12)
    assert second_eigenvalue_modulus(g) == pytest.approx(1 / 3, abs=1e-6)


def test_expander64_passes_checks_and_is_bit_stable():
    spec = ExpanderSpec(n=64, seed=EXPANDER64_SEED)
    g = random_regular_expander(spec)
    assert hashlib.sha256(g.edges.tobytes()).hexdigest() == EXPANDER64_DIGEST
    again = random_regular_expander(spec)
    assert np.array_equal(g.edges, again.edges)
    G = to_nx(g)
    assert set(g.degrees.tolist()) == {3}
    assert nx.is_connected(G) and not nx.is_bipartite(G)
    assert nx.number_of_selfloops(G) == 0 and G.number_of_edges() == 96
    ev = np.sort(np.abs(np.linalg.eigvalsh(g.adjacency.toarray() / 3.0)))
    slem = ev[-2]
    assert slem <= 0.95
    assert second_eigenvalue_modulus(g) == pytest.approx(slem, abs=1e-5)


def test_generation_error_reports_best_modulus():
    spec = ExpanderSpec(n=64, spectral_gap_threshold=0.05, max_resample_attempts=3)
    with pytest.raises(GenerationError) as info:
        random_regular_expander(spec)
    assert 0.05 < info.value.best_slem < 1.0


# --------------------------------------------------------------- subdivision

def test_subdivide_cycle3_is_cycle6():
    c6 = subdivide(standard_graph("cycle", 3), 2)
    assert c6.n == 3 + 3 * 1
    assert nx.is_isomorphic(to_nx(c6), nx.cycle_graph(6))


def test_subdivide_identity_and_k4():
    k4 = random_regular_expander(ExpanderSpec(n=4))
    same = subdivide(k4, 1)
    assert same.n == k4.n and same.num_edges == k4.num_edges
    s = subdivide(k4, 5)
    assert s.n == 4 + 6 * 4 == 28
    assert set(s.degrees[:4].tolist()) == {3}
    assert set(s.degrees[4:].tolist()) == {2}
    assert s.num_edges == 6 * 5


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.randoms(use_true_random=False))
def test_subdivide_scales_distances_exactly(n, L, rnd):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = rnd.sample(pairs, rnd.randint(1, len(pairs)))
    g = Graph.from_edges(n, edges)
    s = subdivide(g, L)
    D = all_pairs_distances(g)
    Ds = all_pairs_distances(s, vertices=np.arange(n), targets=np.arange(n))
    finite = D >= 0
    assert np.array_equal(Ds[finite], L * D[finite])
    assert np.array_equal(Ds < 0, D < 0)


# ----------------------------------------------------------- tree composition

def test_tree_compose_two_vertex_path():
    g = RootedGraph(standard_graph("path", 2), 0)
    out = tree_compose(g, single_vertex(), 1)
    assert out.n == 2 + 1 * (1 + 1 - 1) == 3
    assert nx.is_isomorphic(to_nx(out.graph), nx.path_graph(3))
    assert out.graph.degree(out.root) == 1


@pytest.mark.parametrize("min_tail", [1, 3, 9])
def test_tree_compose_counts_degrees_and_tails(min_tail):
    gg = standard_graph("grid", 3, 4)
    hh = standard_graph("cycle", 5)
    g = RootedGraph(gg, 5)
    h = RootedGraph(hh, 2)
    out = tree_compose(g, h, min_tail)
    T = max(min_tail, 2 * diameter(hh).value)
    assert out.metadata["tail_length"] == T
    assert out.n == composed_size(gg.n, hh.n, T) == gg.n + (gg.n - 1) * (hh.n + T - 1)
    assert out.graph.degree(out.root) == gg.degree(5)
    assert out.graph.max_degree <= max(hh.max_degree, gg.max_degree + 1, hh.degree(2) + 1)
    # each tail has T-1 internal vertices
    assert int(out.tail.sum()) == (gg.n - 1) * (T - 1)
    # removing every tail edge (edges with a tail endpoint or the G-to-tail edge) disconnects each copy
    G = to_nx(out.graph)
    tail_vertices = set(np.flatnonzero(out.tail).tolist())
    G.remove_nodes_from(tail_vertices)
    if T == 1:
        G.remove_edges_from([(u, v) for u, v in list(G.edges) if (u < gg.n) != (v < gg.n)])
    comps = list(nx.connected_components(G))
    assert len(comps) == 1 + (gg.n - 1)
    # sanity: distances from the root into a copy exceed the G-distance of its anchor
    d = bfs_distances(out.graph, out.root)
    dg = bfs_distances(gg, 5)
    block = T - 1 + hh.n
    others = [u for u in range(gg.n) if u != 5]
    for c, u in enumerate(others):
        copy = np.arange(gg.n + c * block + T - 1, gg.n + (c + 1) * block)
        assert d[copy].min() > dg[u]


# ---------------------------------------------------------------------- H_k

def test_build_h0_is_single_vertex():
    h = build_hk(HkParams(()))
    assert h.n == 1 and h.levels.tolist() == [0]


def test_build_h1_structure():
    h = build_hk(HkParams((16,)))
    assert set(h.levels.tolist()) <= {0, 1}
    leaves = np.flatnonzero(h.levels == 0)
    assert leaves.size == h.n - (16 + 24 * 15)
    for v in leaves.tolist():
        nb = h.graph.neighbors(v)
        assert nb.size == 1 and h.levels[nb[0]] == 1
    assert not h.tail.any()  # length-1 tails have no internal vertices
    assert h.graph.max_degree <= 4 and h.graph.degree(h.root) == 3


def test_build_h2_levels_partition_and_degrees():
    h = build_hk(HkParams((4, 8)))
    assert h.levels.shape == (h.n,) and set(h.levels.tolist()) == {0, 1, 2}
    hist = h.metadata["level_histogram"]
    assert sum(c["core"] + c["tail"] for c in hist.values()) == h.n
    for lv, c in hist.items():
        sel = h.levels == int(lv)
        assert c["tail"] == int(np.count_nonzero(sel & h.tail))
    assert h.graph.max_degree <= 4 and h.graph.degree(h.root) == 3
    assert h.metadata["stages"][-1]["vertices"] == h.n


def _level_piece(h, level):
    """Subgraph induced by the vertices of one level (copies of the level's stretched expander plus tails)."""
    mask = h.levels == level
    idx = np.flatnonzero(mask)
    e = h.graph.edges
    keep = mask[e[:, 0]] & mask[e[:, 1]]
    loc = np.full(h.n, -1)
    loc[idx] = np.arange(idx.size)
    return Graph.from_edges(idx.size, loc[e[keep]])


def test_level_piece_cubic_growth_from_radius_two():
    h = build_hk(HkParams((4, 8)))
    rng = np.random.default_rng(0)
    for level in (1, 2):
        piece = _level_piece(h, level)
        for v in rng.choice(piece.n, size=min(60, piece.n), replace=False).tolist():
            c = np.cumsum(sphere_counts(piece, v))
            for r in range(2, 40):
                assert c[min(r, c.size - 1)] <= 3 * r ** 3
    # at r = 1 the cubic bound cannot hold: a vertex of degree 3 already has |B(1)| = 4
    piece = _level_piece(h, 2)
    v = int(np.flatnonzero(piece.degrees == 3)[0])
    assert np.cumsum(sphere_counts(piece, v))[1] == 4 > 3


def test_build_hk_budget_refusal():
    with pytest.raises(BudgetError) as info:
        build_hk(HkParams((16, 64)), vertex_budget=100_000)
    assert info.value.predicted > 100_000


def test_paper_growth_validation_and_size_bound():
    with pytest.raises(ValueError):
        HkParams((16,), enforce_paper_growth=True)
    with pytest.raises(ValueError):
        HkParams((8, 6))
    h = build_hk(HkParams((200,), enforce_paper_growth=True))
    assert 200 ** 2 <= h.n


# ------------------------------------------------------------ test graphs

def test_lattice_distance_matches_bfs():
    for kind, dims in (("path", (9,)), ("cycle", (11,)), ("grid", (5, 7)), ("torus", (6, 5))):
        g = standard_graph(kind, *dims)
        D = all_pairs_distances(g)
        x, y = np.meshgrid(np.arange(g.n), np.arange(g.n), indexing="ij")
        assert np.array_equal(lattice_distance(kind, *dims)(x, y), D)


# -------------------------------------------------------------- root sampler

def test_root_sampler_regular_is_uniform_and_path3_middle_half():
    g = standard_graph("cycle", 5)
    picks = root_sampler_local_limit(g, 1, size=50_000)
    freq = np.bincount(picks, minlength=5) / picks.size
    assert np.all(np.abs(freq - 0.2) <= 3 * math.sqrt(0.2 * 0.8 / picks.size))
    p3 = standard_graph("path", 3)
    picks = root_sampler_local_limit(p3, 2, size=40_000)
    q = np.mean(picks == 1)
    assert abs(q - 0.5) <= 3 * math.sqrt(0.25 / picks.size)


def test_root_sampler_frequencies_match_stationary():
    g = standard_graph("grid", 4, 3)
    N = 100_000
    picks = root_sampler_local_limit(g, 7, size=N)
    pi = g.degrees / g.degrees.sum()
    freq = np.bincount(picks, minlength=g.n) / N
    assert np.all(np.abs(freq - pi) <= 3 * np.sqrt(pi * (1 - pi) / N))
    assert isinstance(root_sampler_local_limit(g, 7), int)
