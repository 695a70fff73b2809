"""Graph families: random regular expanders, subdivisions, trees of graphs and H_k.

The recursive family is

    H_0 = single vertex,   H_k = tree_compose(G_{n_k}[n_k], H_{k-1})

where ``G_n`` is a random 3-regular non-bipartite expander and ``G[L]`` replaces
every edge by a path with ``L`` edges.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .graph import Graph, GraphError, RootedGraph, diameter

DEFAULT_VERTEX_BUDGET = 5_000_000


class GenerationError(RuntimeError):
    """Expander sampling ran out of attempts."""

    def __init__(self, message: str, best_slem: float):
        super().__init__(message)
        self.best_slem = best_slem


class BudgetError(RuntimeError):
    """A construction would exceed the configured vertex budget."""

    def __init__(self, message: str, predicted: int):
        super().__init__(message)
        self.predicted = predicted


@dataclass(frozen=True)
class ExpanderSpec:
    n: int
    degree: int = 3
    spectral_gap_threshold: float = 0.95
    max_resample_attempts: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n <= 0 or self.n % 2:
            raise ValueError(f"expander vertex count must be a positive even integer, got {self.n}")
        if (self.n * self.degree) % 2:
            raise ValueError("n * degree must be even")
        if not 0 < self.degree < self.n:
            raise ValueError("degree must satisfy 0 < degree < n")
        if not 0.0 < self.spectral_gap_threshold < 1.0:
            raise ValueError("spectral_gap_threshold must lie in (0, 1)")
        if self.max_resample_attempts < 1:
            raise ValueError("max_resample_attempts must be positive")


@dataclass(frozen=True)
class HkParams:
    n_sequence: tuple[int, ...]
    enforce_paper_growth: bool = False
    min_tail_length: int = 1

    def __post_init__(self):
        seq = tuple(int(n) for n in self.n_sequence)
        object.__setattr__(self, "n_sequence", seq)
        if any(n <= 0 or n % 2 for n in seq):
            raise ValueError("every n_k must be a positive even integer")
        if any(b <= a for a, b in zip(seq, seq[1:])):
            raise ValueError("n_sequence must be strictly increasing")
        if self.min_tail_length < 1:
            raise ValueError("min_tail_length must be positive")
        if self.enforce_paper_growth:
            prev = 10
            for n in seq:
                if n < 2 * prev * prev:
                    raise ValueError(f"growth condition n_k >= 2 n_(k-1)^2 fails at n_k={n} (n_(k-1)={prev})")
                prev = n

    @property
    def k(self) -> int:
        return len(self.n_sequence)


# ------------------------------------------------------------------ spectra

def second_eigenvalue_modulus(g: Graph, tol: float = 1e-8, max_iter: int = 100_000, seed: int = 0) -> float:
    """Largest ``|lambda|`` of the transition matrix after removing the top eigenvalue 1.

    Power iteration on the square of the symmetrized walk matrix with the
    stationary direction deflated out.
    """
    g.require_connected()
    if g.n <= 1:
        return 0.0
    deg = g.degrees.astype(float)
    inv_sqrt = 1.0 / np.sqrt(deg)
    top = np.sqrt(deg)
    top /= np.linalg.norm(top)
    A = g.adjacency

    def apply(v):
        return inv_sqrt * (A @ (inv_sqrt * v))

    v = rngmod.generator(seed, 0x5EC).standard_normal(g.n)
    v -= top * (top @ v)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = apply(apply(v))
        w -= top * (top @ w)
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(new - est) < tol:
            est = new
            break
        est = new
    return math.sqrt(max(est, 0.0))


def random_regular_expander(spec: ExpanderSpec) -> Graph:
    """Random ``degree``-regular simple graph from the pairing model, with rejection.

    Pairings with loops or parallel edges, disconnected or bipartite samples and
    samples whose second eigenvalue modulus exceeds the threshold are resampled.
    """
    gen = rngmod.generator(spec.seed, 0xE8)
    stubs = np.repeat(np.arange(spec.n, dtype=np.int64), spec.degree)
    best = math.inf
    for _ in range(spec.max_resample_attempts):
        pairs = gen.permutation(stubs).reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        lo, hi = pairs.min(axis=1), pairs.max(axis=1)
        if np.unique(lo * spec.n + hi).size != lo.size:
            continue
        g = Graph.from_edges(spec.n, pairs)
        if not g.is_connected() or g.is_bipartite():
            continue
        slem = second_eigenvalue_modulus(g, seed=spec.seed)
        best = min(best, slem)
        if slem <= spec.spectral_gap_threshold:
            return g
    raise GenerationError(
        f"no {spec.degree}-regular expander on {spec.n} vertices with modulus <= "
        f"{spec.spectral_gap_threshold} after {spec.max_resample_attempts} attempts (best {best:.4f})",
        best,
    )


# ------------------------------------------------------------ constructions

def subdivide(g: Graph, L: int) -> Graph:
    """Replace every edge by an ``L``-edge path; original ids are kept as a prefix.

    The internal vertices of the ``i``-th edge (in sorted edge order) are
    ``n + i*(L-1), ..., n + i*(L-1) + L-2``, numbered from the lower endpoint.
    """
    if L < 1:
        raise ValueError("subdivision length must be positive")
    e = g.edges
    if L == 1:
        return Graph.from_edges(g.n, e)
    m = e.shape[0]
    internal = g.n + np.arange(m * (L - 1), dtype=np.int64).reshape(m, L - 1)
    chain = np.column_stack([e[:, 0], internal, e[:, 1]])
    edges = np.stack([chain[:, :-1], chain[:, 1:]], axis=-1).reshape(-1, 2)
    return Graph.from_edges(g.n + m * (L - 1), edges)


def composed_size(g_vertices: int, h_vertices: int, tail_length: int) -> int:
    """Vertex count of a tree of ``H``'s under ``G`` with tails of ``tail_length`` edges."""
    return g_vertices + (g_vertices - 1) * (h_vertices + tail_length - 1)


def tail_length_for(h: RootedGraph, min_tail_length: int = 1) -> int:
    return max(min_tail_length, 2 * diameter(h.graph, "exact").value)


def tree_compose(g: RootedGraph, h: RootedGraph, min_tail_length: int = 1) -> RootedGraph:
    """Attach a fresh copy of ``h`` to every non-root vertex of ``g`` through a tail.

    Each tail is a path with ``T = max(min_tail_length, 2*diam(h))`` edges from
    ``u`` to the copy's root.  Layout: the vertices of ``g`` first, then for each
    non-root ``u`` in increasing order its ``T-1`` tail-internal vertices followed
    by its copy of ``h``.  Levels, when both inputs carry them, are inherited:
    tail-internal vertices take the level of the ``g`` vertex they hang from.
    """
    g.graph.require_connected()
    h.graph.require_connected()
    T = tail_length_for(h, min_tail_length)
    nG, nH = g.n, h.n
    others = np.array([u for u in range(nG) if u != g.root], dtype=np.int64)
    c = others.size
    block = (T - 1) + nH
    base = nG + np.arange(c, dtype=np.int64) * block
    internal = base[:, None] + np.arange(T - 1, dtype=np.int64)[None, :]
    copy_root = base + (T - 1) + h.root
    chain = np.column_stack([others, internal, copy_root])
    tail_edges = np.stack([chain[:, :-1], chain[:, 1:]], axis=-1).reshape(-1, 2)
    h_edges = (h.graph.edges[None, :, :] + (base + T - 1)[:, None, None]).reshape(-1, 2)
    n_total = composed_size(nG, nH, T)
    edges = np.concatenate([g.graph.edges, tail_edges, h_edges])
    out = Graph.from_edges(n_total, edges)

    tail = np.zeros(n_total, dtype=bool)
    if g.tail is not None:
        tail[:nG] = g.tail
    h_tail = h.tail if h.tail is not None else np.zeros(nH, dtype=bool)
    per_copy_tail = np.concatenate([np.ones(T - 1, dtype=bool), h_tail])
    tail[nG:] = np.tile(per_copy_tail, c)

    levels = None
    if g.levels is not None and h.levels is not None:
        levels = np.empty(n_total, dtype=np.int64)
        levels[:nG] = g.levels
        per = np.empty((c, block), dtype=np.int64)
        per[:, :T - 1] = g.levels[others][:, None]
        per[:, T - 1:] = h.levels[None, :]
        levels[nG:] = per.ravel()

    meta = {"generator": "tree_compose", "tail_length": T, "copies": int(c)}
    return RootedGraph(out, g.root, levels, tail, meta)


def build_hk(params: HkParams, expander_template: ExpanderSpec | None = None,
             vertex_budget: int = DEFAULT_VERTEX_BUDGET) -> RootedGraph:
    """Build ``H_k`` for ``params.n_sequence`` with level and tail annotations."""
    template = expander_template or ExpanderSpec(n=4)
    lb = _size_lower_bound(params)
    if lb > vertex_budget:
        raise BudgetError(f"H_{params.k} needs at least {lb} vertices (budget {vertex_budget})", lb)

    h = RootedGraph(Graph.from_edges(1, []), 0, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=bool))
    stages = []
    diam_ratios = []
    for level, n in enumerate(params.n_sequence, start=1):
        spec = replace(template, n=n, seed=rngmod.derive_seed(template.seed, level, n))
        gn = random_regular_expander(spec)
        dg = diameter(gn, "exact").value
        diam_ratios.append(dg / math.log(n))
        stretched = subdivide(gn, n)
        T = tail_length_for(h, params.min_tail_length)
        predicted = composed_size(stretched.n, h.n, T)
        if predicted > vertex_budget:
            raise BudgetError(f"H_{level} would have {predicted} vertices (budget {vertex_budget})", predicted)
        g_rooted = RootedGraph(stretched, 0, np.full(stretched.n, level, dtype=np.int64),
                               np.zeros(stretched.n, dtype=bool))
        h = tree_compose(g_rooted, h, params.min_tail_length)
        assert h.n == predicted
        stages.append({"level": level, "n": n, "expander_seed": spec.seed, "expander_diameter": dg,
                       "tail_length": T, "vertices": h.n})

    if template.degree == 3 and params.k >= 1:
        if h.graph.max_degree > 4:
            raise AssertionError(f"max degree {h.graph.max_degree} exceeds 4")
        if h.graph.degree(h.root) != 3:
            raise AssertionError("root degree must equal 3")

    levels, counts = np.unique(h.levels, return_counts=True)
    hist = {}
    for lv in levels:
        sel = h.levels == lv
        hist[str(int(lv))] = {"core": int(np.count_nonzero(sel & ~h.tail)),
                              "tail": int(np.count_nonzero(sel & h.tail))}
    meta = {
        "generator": "build_hk",
        "params": {**asdict(params), "n_sequence": list(params.n_sequence)},
        "expander_template": asdict(template),
        "expander_diameter_constant": max(diam_ratios) if diam_ratios else 0.0,
        "stages": stages,
        "level_histogram": hist,
    }
    return RootedGraph(h.graph, h.root, h.levels, h.tail, meta)


def _size_lower_bound(params: HkParams) -> int:
    size, diam_lb = 1, 0
    for n in params.n_sequence:
        stretched = n + (n * 3 // 2) * (n - 1)
        T = max(params.min_tail_length, 2 * diam_lb)
        size = composed_size(stretched, size, T)
        diam_lb = n
    return size


# ------------------------------------------------------------- test graphs

def standard_graph(kind: str, *dims: int) -> Graph:
    """``path(n)``, ``cycle(n)``, ``grid(rows, cols)`` or ``torus(rows, cols)``.

    Grid and torus vertices are numbered row-major: ``(i, j) -> i*cols + j``.
    """
    if any(int(d) <= 0 for d in dims):
        raise ValueError("dimensions must be positive")
    if kind == "path":
        (n,) = dims
        v = np.arange(n - 1)
        return Graph.from_edges(n, np.column_stack([v, v + 1]))
    if kind == "cycle":
        (n,) = dims
        if n < 3:
            raise ValueError("a cycle needs at least 3 vertices")
        v = np.arange(n)
        return Graph.from_edges(n, np.column_stack([v, (v + 1) % n]))
    if kind in ("grid", "torus"):
        rows, cols = dims
        idx = np.arange(rows * cols).reshape(rows, cols)
        if kind == "grid":
            horiz = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
            vert = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
        else:
            if rows < 3 or cols < 3:
                raise ValueError("torus sides must be at least 3 to stay simple")
            horiz = np.column_stack([idx.ravel(), np.roll(idx, -1, axis=1).ravel()])
            vert = np.column_stack([idx.ravel(), np.roll(idx, -1, axis=0).ravel()])
        return Graph.from_edges(rows * cols, np.concatenate([horiz, vert]))
    raise ValueError(f"unknown graph kind {kind!r}")


def lattice_distance(kind: str, *dims: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Closed-form hop distance for ``standard_graph(kind, *dims)``."""
    if kind == "path":
        return lambda x, y: np.abs(np.asarray(x) - np.asarray(y))
    if kind == "cycle":
        (n,) = dims

        def cyc(x, y):
            d = np.abs(np.asarray(x) - np.asarray(y))
            return np.minimum(d, n - d)
        return cyc
    if kind in ("grid", "torus"):
        rows, cols = dims

        def lat(x, y):
            x, y = np.asarray(x), np.asarray(y)
            di = np.abs(x // cols - y // cols)
            dj = np.abs(x % cols - y % cols)
            if kind == "torus":
                di = np.minimum(di, rows - di)
                dj = np.minimum(dj, cols - dj)
            return di + dj
        return lat
    raise ValueError(f"unknown graph kind {kind!r}")


def root_sampler_local_limit(h: RootedGraph | Graph, seed: int, size: int | None = None):
    """Vertex (or ``size`` vertices) drawn with probability ``deg(v) / mu(V)``."""
    g = h.graph if isinstance(h, RootedGraph) else h
    g.require_connected()
    gen = rngmod.generator(seed, 0x5A)
    u = gen.random(1 if size is None else size)
    picks = sample_stationary(g, u)
    return int(picks[0]) if size is None else picks


def sample_stationary(g: Graph, uniforms: np.ndarray, subset_members: np.ndarray | None = None) -> np.ndarray:
    """Map uniforms to vertices distributed proportionally to degree."""
    members = np.arange(g.n) if subset_members is None else np.asarray(subset_members)
    w = g.degrees[members].astype(float)
    if w.sum() == 0:
        w = np.ones_like(w)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    pos = np.searchsorted(cdf, np.asarray(uniforms), side="right")
    return members[np.minimum(pos, members.size - 1)]


def expander_family_constant(graphs: Sequence[Graph]) -> float:
    """Empirical ``C`` with ``diam(G_n) <= C log n`` across a generated family."""
    return max(diameter(g, "exact").value / math.log(g.n) for g in graphs)
