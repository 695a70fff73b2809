"""Immutable graphs in compressed adjacency form and their metric primitives.

Every walk, partition and growth functional in the package reads a :class:`Graph`.
Distances are hop counts; ``-1`` marks "not reached" in distance arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

EXACT_DIAMETER_CAP = 50_000


class GraphError(ValueError):
    """Raised for malformed graphs or operations that need connectivity."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph stored as CSR arrays with sorted neighbor lists."""

    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        indptr.setflags(write=False)
        indices.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]] | np.ndarray) -> "Graph":
        """Build a graph on ``n`` vertices; rejects self-loops and parallel edges."""
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if n < 0:
            raise GraphError("vertex count must be non-negative")
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self-loops are not allowed")
        lo = np.minimum(e[:, 0], e[:, 1])
        hi = np.maximum(e[:, 0], e[:, 1])
        key = lo * max(n, 1) + hi
        if np.unique(key).size != key.size:
            raise GraphError("parallel edges are not allowed")
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(indptr, dst)

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    vertex_count = n

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.diff(self.indptr)
        d.setflags(write=False)
        return d

    @property
    def num_edges(self) -> int:
        return int(self.indices.size // 2)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def neighbors(self, v: int) -> np.ndarray:
        self.check_vertex(v)
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        self.check_vertex(v)
        return int(self.degrees[v])

    def check_vertex(self, v) -> None:
        if not (0 <= int(v) < self.n):
            raise GraphError(f"vertex {v} out of range for graph on {self.n} vertices")

    @cached_property
    def edges(self) -> np.ndarray:
        """Edge list as an ``(m, 2)`` array with ``u < v``, lexicographically sorted."""
        src = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)
        mask = src < self.indices
        out = np.column_stack([src[mask], self.indices[mask]])
        out.setflags(write=False)
        return out

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def total_measure(self) -> int:
        return int(self.degrees.sum())

    def measure(self, vertices) -> int:
        """Degree measure of a vertex collection (indices or boolean mask)."""
        return int(self.degrees[np.asarray(vertices)].sum())

    @cached_property
    def components(self) -> tuple[int, np.ndarray]:
        return csgraph.connected_components(self.adjacency, directed=False)

    def is_connected(self) -> bool:
        return self.n <= 1 or self.components[0] == 1

    def require_connected(self) -> None:
        if not self.is_connected():
            raise GraphError(f"graph has {self.components[0]} connected components; a connected graph is required")

    def is_bipartite(self) -> bool:
        """Two-coloring by BFS over every component."""
        color = np.full(self.n, -1, dtype=np.int64)
        for s in range(self.n):
            if color[s] >= 0:
                continue
            dist = bfs_distances(self, s)
            reached = dist >= 0
            color[reached] = dist[reached] % 2
        src = np.repeat(np.arange(self.n), self.degrees)
        return bool(np.all(color[src] != color[self.indices]))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.num_edges})"


@dataclass(frozen=True, eq=False)
class VertexSubset:
    """Membership mask over a graph's vertices with its cached degree measure."""

    mask: np.ndarray
    mu: int

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_vertices(cls, g: Graph, vertices) -> "VertexSubset":
        mask = np.zeros(g.n, dtype=bool)
        v = np.asarray(vertices, dtype=np.int64).ravel()
        if v.size and (v.min() < 0 or v.max() >= g.n):
            raise GraphError("subset vertex out of range")
        mask[v] = True
        return cls(mask, int(g.degrees[mask].sum()))

    @classmethod
    def from_mask(cls, g: Graph, mask) -> "VertexSubset":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (g.n,):
            raise GraphError("mask length must equal the vertex count")
        return cls(mask, int(g.degrees[mask].sum()))

    @classmethod
    def full(cls, g: Graph) -> "VertexSubset":
        return cls(np.ones(g.n, dtype=bool), g.total_measure)

    def validate(self, g: Graph) -> None:
        if self.mask.shape != (g.n,):
            raise GraphError("subset does not belong to this graph")
        if int(g.degrees[self.mask].sum()) != self.mu:
            raise GraphError("cached measure does not match member degrees")

    @cached_property
    def members(self) -> np.ndarray:
        m = np.flatnonzero(self.mask)
        m.setflags(write=False)
        return m

    @cached_property
    def local_index(self) -> np.ndarray:
        """Map from vertex id to position in :attr:`members` (``-1`` outside)."""
        idx = np.full(self.mask.size, -1, dtype=np.int64)
        idx[self.members] = np.arange(self.members.size)
        idx.setflags(write=False)
        return idx

    def __len__(self) -> int:
        return int(self.members.size)

    def __contains__(self, v) -> bool:
        return bool(self.mask[int(v)])


@dataclass(frozen=True, eq=False)
class RootedGraph:
    """A graph with a root and optional per-vertex level and tail annotations."""

    graph: Graph
    root: int
    levels: np.ndarray | None = None
    tail: np.ndarray | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.root < self.graph.n):
            raise GraphError("root must be a vertex of the graph")
        for name in ("levels", "tail"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=bool if name == "tail" else np.int64)
                if arr.shape != (self.graph.n,):
                    raise GraphError(f"{name} must annotate every vertex exactly once")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.graph.n


def _gather_neighbors(g: Graph, frontier: np.ndarray) -> np.ndarray:
    starts = g.indptr[frontier]
    counts = g.indptr[frontier + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
    return g.indices[offsets + np.arange(total)]


def bfs_distances(g: Graph, source, radius: int | None = None) -> np.ndarray:
    """Hop distances from ``source`` (a vertex or an array of vertices).

    Vertices farther than ``radius`` (or unreachable) get ``-1``.
    """
    src = np.atleast_1d(np.asarray(source, dtype=np.int64))
    for s in src:
        g.check_vertex(s)
    if radius is None and src.size == 1 and g.n > 4096:
        return _full_bfs(g, int(src[0]))
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[src] = 0
    frontier = np.unique(src)
    r = 0
    while frontier.size and (radius is None or r < radius):
        nbrs = _gather_neighbors(g, frontier)
        nbrs = np.unique(nbrs[dist[nbrs] < 0])
        r += 1
        dist[nbrs] = r
        frontier = nbrs
    return dist


def _full_bfs(g: Graph, s: int) -> np.ndarray:
    # C-level BFS order plus pointer jumping over the predecessor tree.
    order, pred = csgraph.breadth_first_order(g.adjacency, s, directed=False, return_predecessors=True)
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[order] = 1
    dist[s] = 0
    jump = pred.astype(np.int64)
    jump[s] = s
    jump[jump < 0] = s
    active = order[1:]
    while active.size:
        a = jump[active]
        dist[active] += dist[a]
        jump[active] = jump[a]
        active = active[jump[active] != s]
    return dist


def bfs_ball(g: Graph, x: int, r: int) -> tuple[VertexSubset, np.ndarray]:
    """Closed ball of radius ``r`` about ``x`` and the hop distances of its members."""
    if r < 0:
        raise GraphError("radius must be non-negative")
    dist = bfs_distances(g, x, radius=r)
    sub = VertexSubset.from_mask(g, dist >= 0)
    return sub, dist[sub.members]


def distance(g: Graph, x: int, y: int) -> float:
    """Shortest-path hop count, ``math.inf`` when ``x`` and ``y`` are disconnected."""
    g.check_vertex(x)
    g.check_vertex(y)
    if x == y:
        return 0
    seen = np.zeros(g.n, dtype=bool)
    seen[x] = True
    frontier = np.array([x], dtype=np.int64)
    r = 0
    while frontier.size:
        r += 1
        nbrs = _gather_neighbors(g, frontier)
        nbrs = np.unique(nbrs[~seen[nbrs]])
        if np.any(nbrs == y):
            return r
        seen[nbrs] = True
        frontier = nbrs
    return math.inf


def sphere_counts(g: Graph, x: int, radius: int | None = None) -> np.ndarray:
    """``counts[r] = |{y : d(x, y) = r}|`` for ``r`` up to the radius or eccentricity."""
    dist = bfs_distances(g, x, radius=radius)
    return np.bincount(dist[dist >= 0])


def ball_sizes(g: Graph, x: int, radii) -> np.ndarray:
    """``|B_x(r)|`` for each requested radius."""
    radii = np.asarray(radii, dtype=np.int64)
    cum = np.cumsum(sphere_counts(g, x, radius=int(radii.max()) if radii.size else 0))
    return cum[np.minimum(radii, cum.size - 1)]


def ball_size_table(g: Graph, vertices, radii, weights: np.ndarray | None = None) -> np.ndarray:
    """Ball sizes (or weighted ball masses) for many centers at once.

    Returns an array of shape ``(len(vertices), len(radii))``.  With ``weights``
    the entry is the sum of ``weights`` over the ball instead of its cardinality.
    """
    vertices = np.asarray(vertices, dtype=np.int64).ravel()
    radii = np.asarray(radii, dtype=np.int64).ravel()
    out = np.zeros((vertices.size, radii.size), dtype=np.float64 if weights is not None else np.int64)
    if vertices.size == 0 or radii.size == 0:
        return out
    rmax = int(radii.max())
    chunk = max(1, (1 << 22) // max(g.n, 1))
    limit = float(rmax) + 0.5
    for lo in range(0, vertices.size, chunk):
        block = vertices[lo:lo + chunk]
        d = csgraph.dijkstra(g.adjacency, directed=False, indices=block, unweighted=True, limit=limit)
        d = np.where(np.isfinite(d), d, np.inf)
        for j, r in enumerate(radii):
            within = d <= r
            if weights is None:
                out[lo:lo + block.size, j] = within.sum(axis=1)
            else:
                out[lo:lo + block.size, j] = within @ weights
    return out


def growth_profile(g: Graph, x: int, k: int) -> float:
    """Natural log of ``|B_x(8^k)| / |B_x(8^(k-1))|``."""
    if k < 1:
        raise GraphError("scale index k must be at least 1")
    big, small = ball_sizes(g, x, [8 ** k, 8 ** (k - 1)])
    return math.log(big / small)


def growth_profile_table(g: Graph, vertices, ks) -> np.ndarray:
    """Growth profiles for many vertices; shape ``(len(vertices), len(ks))``."""
    ks = [int(k) for k in ks]
    if any(k < 1 for k in ks):
        raise GraphError("scale index k must be at least 1")
    radii = sorted({8 ** k for k in ks} | {8 ** (k - 1) for k in ks})
    col = {r: i for i, r in enumerate(radii)}
    sizes = ball_size_table(g, vertices, radii)
    out = np.empty((sizes.shape[0], len(ks)))
    for j, k in enumerate(ks):
        out[:, j] = np.log(sizes[:, col[8 ** k]] / sizes[:, col[8 ** (k - 1)]])
    return out


def edge_boundary_size(g: Graph, s: VertexSubset) -> int:
    nbrs = _gather_neighbors(g, s.members)
    return int(np.count_nonzero(~s.mask[nbrs]))


def edge_expansion(g: Graph, s: VertexSubset) -> float:
    """``|boundary edges of S| / mu(S)``."""
    if len(s) == 0:
        raise GraphError("edge expansion is undefined for the empty set")
    if s.mu == 0:
        return 0.0
    return edge_boundary_size(g, s) / s.mu


@dataclass(frozen=True)
class Diameter:
    value: int
    mode: str


def diameter(g: Graph, mode: str = "exact", cap: int = EXACT_DIAMETER_CAP) -> Diameter:
    """Graph diameter.

    ``mode="exact"`` runs BFS from every vertex and is refused above ``cap``
    vertices; ``mode="two_sweep"`` returns the double-BFS lower bound.
    """
    g.require_connected()
    if g.n <= 1:
        return Diameter(0, mode)
    if mode == "two_sweep":
        d0 = bfs_distances(g, 0)
        u = int(np.argmax(d0))
        return Diameter(int(bfs_distances(g, u).max()), mode)
    if mode != "exact":
        raise ValueError(f"unknown diameter mode {mode!r}")
    if g.n > cap:
        raise GraphError(f"exact diameter refused: {g.n} vertices exceeds cap {cap}; use two_sweep")
    best = 0
    chunk = max(1, (1 << 22) // g.n)
    for lo in range(0, g.n, chunk):
        d = csgraph.dijkstra(g.adjacency, directed=False, indices=np.arange(lo, min(g.n, lo + chunk)),
                             unweighted=True)
        best = max(best, int(d.max()))
    return Diameter(best, mode)


def all_pairs_distances(g: Graph, vertices=None, targets=None, cap: int = 8_000) -> np.ndarray:
    """Dense hop-distance matrix between ``vertices`` and ``targets`` (default all).

    Unreachable pairs are ``inf``.  Refused when either side exceeds ``cap``.
    """
    rows = np.arange(g.n) if vertices is None else np.asarray(vertices, dtype=np.int64)
    cols = rows if targets is None and vertices is not None else (
        np.arange(g.n) if targets is None else np.asarray(targets, dtype=np.int64))
    if rows.size > cap or cols.size > cap:
        raise GraphError(f"dense distance matrix refused: {rows.size}x{cols.size} exceeds cap {cap}")
    out = np.empty((rows.size, cols.size))
    chunk = max(1, (1 << 22) // max(g.n, 1))
    for lo in range(0, rows.size, chunk):
        d = csgraph.dijkstra(g.adjacency, directed=False, indices=rows[lo:lo + chunk], unweighted=True)
        out[lo:lo + chunk] = d[:, cols]
    return out


# ---------------------------------------------------------------- text format

def write_graph(path, g: Graph | RootedGraph, metadata: dict[str, Any] | None = None) -> Path:
    """Write the edge-list text format plus a ``.meta.json`` sidecar.

    The header is ``graph <n> <m>`` followed by one ``u v`` line per edge
    (0-indexed, ``u < v``, sorted).
    """
    path = Path(path)
    rooted = g if isinstance(g, RootedGraph) else None
    graph = rooted.graph if rooted else g
    e = graph.edges
    with open(path, "w") as fh:
        fh.write(f"graph {graph.n} {e.shape[0]}\n")
        if e.size:
            np.savetxt(fh, e, fmt="%d")
    meta = dict(metadata or {})
    if rooted is not None:
        meta = {**rooted.metadata, **meta, "root": int(rooted.root)}
        if rooted.levels is not None:
            meta["levels"] = rooted.levels.tolist()
        if rooted.tail is not None:
            meta["tail"] = np.flatnonzero(rooted.tail).tolist()
    with open(meta_path(path), "w") as fh:
        json.dump(meta, fh, sort_keys=True, default=_json_default)
    return path


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def read_graph(path) -> tuple[Graph, dict[str, Any]]:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "graph":
            raise GraphError(f"{path}: expected header 'graph <vertex_count> <edge_count>'")
        n, m = int(header[1]), int(header[2])
        body = np.loadtxt(fh, dtype=np.int64, ndmin=2) if m else np.empty((0, 2), dtype=np.int64)
    if body.shape[0] != m:
        raise GraphError(f"{path}: header promises {m} edges, found {body.shape[0]}")
    if m and np.any(body[:, 0] >= body[:, 1]):
        raise GraphError(f"{path}: edges must be written with u < v")
    g = Graph.from_edges(n, body)
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    return g, meta


def read_rooted(path) -> RootedGraph:
    g, meta = read_graph(path)
    levels = meta.pop("levels", None)
    tail_list = meta.pop("tail", None)
    tail = None
    if tail_list is not None:
        tail = np.zeros(g.n, dtype=bool)
        tail[np.asarray(tail_list, dtype=np.int64)] = True
    root = int(meta.pop("root", 0))
    return RootedGraph(g, root, None if levels is None else np.asarray(levels), tail, meta)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
