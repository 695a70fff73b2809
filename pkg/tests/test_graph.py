import math
from collections import deque

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from walklab.generators import standard_graph
from walklab.graph import (Graph, GraphError, RootedGraph, VertexSubset, all_pairs_distances, ball_size_table,
                           ball_sizes, bfs_ball, bfs_distances, diameter, distance, edge_boundary_size,
                           edge_expansion, growth_profile, growth_profile_table, read_graph, read_rooted,
                           sphere_counts, write_graph)


def py_bfs(g: Graph, s: int) -> dict[int, int]:
    """Plain adjacency-list BFS, independent of the CSR code paths."""
    adj = {v: [] for v in range(g.n)}
    for u, v in g.edges.tolist():
        adj[u].append(v)
        adj[v].append(u)
    dist = {s: 0}
    q = deque([s])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def to_nx(g: Graph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    G.add_edges_from(g.edges.tolist())
    return G


@st.composite
def small_graphs(draw, max_n=30):
    n = draw(st.integers(1, max_n))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=3 * n)) if pairs else []
    return Graph.from_edges(n, chosen)


# ---------------------------------------------------------------- construction

def test_from_edges_rejects_bad_input():
    with pytest.raises(GraphError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(GraphError):
        Graph.from_edges(3, [(0, 1), (1, 0)])
    with pytest.raises(GraphError):
        Graph.from_edges(3, [(0, 3)])


def test_standard_graph_degrees():
    c = standard_graph("cycle", 8)
    assert c.n == 8 and set(c.degrees.tolist()) == {2}
    t = standard_graph("torus", 4, 4)
    assert t.n == 16 and set(t.degrees.tolist()) == {4}
    g = standard_graph("grid", 3, 3)
    deg = g.degrees.reshape(3, 3)
    assert deg[0, 0] == 2 and deg[0, 1] == 3 and deg[1, 1] == 4


def test_vertex_subset_measure_and_validation():
    g = standard_graph("path", 5)
    s = VertexSubset.from_vertices(g, [0, 1, 2])
    assert s.mu == 1 + 2 + 2
    with pytest.raises(GraphError):
        VertexSubset.from_vertices(g, [7])


# ------------------------------------------------------------------- balls

def test_bfs_ball_examples():
    p = standard_graph("path", 100)
    ball, dist = bfs_ball(p, 50, 3)
    assert len(ball) == 7
    assert sorted(dist.tolist()) == [0, 1, 1, 2, 2, 3, 3]
    ball0, _ = bfs_ball(p, 10, 0)
    assert ball0.members.tolist() == [10]
    with pytest.raises(GraphError):
        bfs_ball(p, 100, 1)


def test_torus_ball_matches_pairwise_bfs_oracle():
    t = standard_graph("torus", 32, 32)
    ball, _ = bfs_ball(t, 5 * 32 + 7, 2)
    oracle = {v for v, d in py_bfs(t, 5 * 32 + 7).items() if d <= 2}
    assert set(ball.members.tolist()) == oracle
    assert len(ball) == 13 == 2 * 2 ** 2 + 2 * 2 + 1


def test_distance_examples():
    c = standard_graph("cycle", 8)
    assert distance(c, 3, 3) == 0
    assert distance(c, 0, 4) == 4
    two = Graph.from_edges(4, [(0, 1), (2, 3)])
    assert distance(two, 0, 3) == math.inf


def test_growth_profile_examples():
    p = standard_graph("path", 1000)
    assert growth_profile(p, 500, 1) == pytest.approx(math.log(17 / 3), abs=1e-15)
    t = standard_graph("torus", 64, 64)
    assert growth_profile(t, 32 * 64 + 32, 1) == pytest.approx(math.log(145 / 5), abs=1e-15)
    small = standard_graph("cycle", 10)
    assert growth_profile(small, 0, 2) == 0.0


def test_growth_profile_table_matches_pointwise():
    t = standard_graph("grid", 30, 30)
    vs = [0, 31, 450, 899]
    tab = growth_profile_table(t, vs, [1, 2])
    for i, v in enumerate(vs):
        for j, k in enumerate([1, 2]):
            assert tab[i, j] == pytest.approx(growth_profile(t, v, k), abs=1e-14)


def test_ball_size_table_matches_bfs_oracle():
    g = standard_graph("grid", 12, 9)
    radii = [0, 1, 3, 7, 40]
    tab = ball_size_table(g, np.arange(g.n), radii)
    wtab = ball_size_table(g, np.arange(g.n), radii, weights=g.degrees.astype(float))
    for v in range(0, g.n, 7):
        d = py_bfs(g, v)
        for j, r in enumerate(radii):
            inside = [u for u, du in d.items() if du <= r]
            assert tab[v, j] == len(inside)
            assert wtab[v, j] == sum(g.degrees[inside])
        assert ball_sizes(g, v, radii).tolist() == tab[v].tolist()


def test_sphere_counts_sum_to_component():
    g = standard_graph("torus", 7, 5)
    s = sphere_counts(g, 3)
    assert s.sum() == g.n and s[0] == 1


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.data())
def test_ball_monotone_and_growth_bounded(g, data):
    x = data.draw(st.integers(0, g.n - 1))
    oracle = py_bfs(g, x)
    delta = max(g.max_degree, 0)
    prev = None
    for r in range(0, 8):
        ball, dist = bfs_ball(g, x, r)
        assert set(ball.members.tolist()) == {v for v, d in oracle.items() if d <= r}
        assert all(d == oracle[v] for v, d in zip(ball.members.tolist(), dist.tolist()))
        if prev is not None:
            assert set(prev) <= set(ball.members.tolist())
            assert len(ball) <= len(prev) * (1 + delta)
        prev = ball.members.tolist()


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.data())
def test_bfs_distances_match_networkx(g, data):
    x = data.draw(st.integers(0, g.n - 1))
    d = bfs_distances(g, x)
    ref = nx.single_source_shortest_path_length(to_nx(g), x)
    for v in range(g.n):
        assert d[v] == ref.get(v, -1)


def test_full_bfs_path_on_large_graph_matches_frontier_bfs():
    g = standard_graph("grid", 100, 100)
    full = bfs_distances(g, 0)
    truncated = bfs_distances(g, 0, radius=10 ** 6)
    assert np.array_equal(full, truncated)
    ref = nx.single_source_shortest_path_length(to_nx(g), 0)
    assert all(full[v] == d for v, d in ref.items())


# --------------------------------------------------------------- expansion

def test_edge_expansion_examples():
    g = standard_graph("grid", 40, 40)
    assert edge_expansion(g, VertexSubset.full(g)) == 0.0
    k = 6
    box = [(10 + i) * 40 + 10 + j for i in range(k) for j in range(k)]
    S = VertexSubset.from_vertices(g, box)
    boundary = sum(1 for u, v in g.edges.tolist() if (u in set(box)) != (v in set(box)))
    assert edge_boundary_size(g, S) == boundary == 4 * k
    assert edge_expansion(g, S) == pytest.approx(1 / k, abs=1e-15)
    assert edge_expansion(g, VertexSubset.from_vertices(g, [500])) == 1.0
    with pytest.raises(GraphError):
        edge_expansion(g, VertexSubset.from_vertices(g, []))


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.data())
def test_edge_expansion_in_unit_interval(g, data):
    members = data.draw(st.lists(st.integers(0, g.n - 1), min_size=1, unique=True))
    S = VertexSubset.from_vertices(g, members)
    if S.mu == 0:
        return
    assert 0.0 <= edge_expansion(g, S) <= 1.0


# ---------------------------------------------------------------- diameter

def test_diameter_examples():
    assert diameter(standard_graph("path", 37)).value == 36
    assert diameter(standard_graph("cycle", 10)).value == 5
    assert diameter(standard_graph("cycle", 10), mode="two_sweep").mode == "two_sweep"
    with pytest.raises(GraphError):
        diameter(Graph.from_edges(4, [(0, 1), (2, 3)]))
    with pytest.raises(GraphError):
        diameter(standard_graph("path", 50), cap=10)


@pytest.mark.parametrize("seed", range(15))
def test_two_sweep_exact_on_random_trees(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    parents = [int(rng.integers(0, v)) for v in range(1, n)]
    g = Graph.from_edges(n, [(p, v) for v, p in zip(range(1, n), parents)])
    exact = nx.diameter(to_nx(g))
    assert diameter(g, mode="two_sweep").value == exact == diameter(g).value


@settings(max_examples=40, deadline=None)
@given(small_graphs(max_n=25))
def test_two_sweep_is_a_lower_bound(g):
    if not g.is_connected():
        return
    assert diameter(g, mode="two_sweep").value <= diameter(g).value


def test_all_pairs_distances_matches_networkx():
    g = standard_graph("grid", 7, 6)
    D = all_pairs_distances(g)
    ref = dict(nx.all_pairs_shortest_path_length(to_nx(g)))
    assert all(D[u, v] == ref[u][v] for u in range(g.n) for v in range(g.n))


# --------------------------------------------------------------------- I/O

def test_graph_file_round_trip(tmp_path):
    g = standard_graph("grid", 4, 5)
    levels = np.arange(g.n) % 3
    tail = np.arange(g.n) % 2 == 0
    rg = RootedGraph(g, 7, levels=levels, tail=tail, metadata={"generator": "grid"})
    path = write_graph(tmp_path / "g.graph", rg, {"generator": "grid", "seed": 3})
    header = path.read_text().splitlines()[0]
    assert header == f"graph {g.n} {g.num_edges}"
    back = read_rooted(path)
    assert back.root == 7
    assert np.array_equal(back.graph.indices, g.indices) and np.array_equal(back.graph.indptr, g.indptr)
    assert np.array_equal(back.levels, levels) and np.array_equal(back.tail, tail)
    g2, meta = read_graph(path)
    assert meta["seed"] == 3 and g2.num_edges == g.num_edges


def test_read_graph_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.graph"
    bad.write_text("graph 3 2\n0 1\n")
    with pytest.raises(GraphError):
        read_graph(bad)
