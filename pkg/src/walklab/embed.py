"""Random ball-carving partitions and single-scale threshold embeddings.

A carving partition at scale ``tau`` orders the points by a uniform random
permutation, draws ``R`` uniformly from ``[tau/4, tau/2)`` and assigns every point
to the first center (in permutation order) within distance ``R``.  A coordinate
map then sends ``x`` to ``alpha_{P(x)} * d(x, X \\ P(x))`` with independent fair
bits ``alpha`` per block.  ``m`` such maps scaled by ``1/sqrt(m)`` form an
:class:`EmbeddingEnsemble`.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csgraph

from . import rng as rngmod
from .graph import Graph, GraphError, VertexSubset, growth_profile_table

EMBED_SALT = 0xC4B
ORACLE_MAX_POINTS = 6
EXHAUSTIVE_LIPSCHITZ = 500


# ----------------------------------------------------------------- metrics

class DenseMetric:
    """Explicit finite metric on points ``0..N-1``."""

    def __init__(self, D):
        D = np.asarray(D)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(D, D.T) or np.any(np.diag(D) != 0) or np.any(D[~np.eye(len(D), dtype=bool)] <= 0):
            raise ValueError("not a metric: need symmetry, zero diagonal and positive off-diagonal")
        self.D = D
        self.size = D.shape[0]
        self.labels = np.arange(self.size)
        self._pairs: dict[float, tuple] = {}

    def pairs(self, cutoff: float):
        if cutoff not in self._pairs:
            i, j = np.nonzero(self.D <= cutoff)
            self._pairs[cutoff] = (i, j, self.D[i, j].astype(float))
        return self._pairs[cutoff]

    def row(self, i: int) -> np.ndarray:
        return self.D[i].astype(float)

    def ball_count(self, i: int, r: float) -> int:
        return int(np.count_nonzero(self.D[i] <= r))


class GraphMetric:
    """Shortest-path metric of ``graph`` restricted to the points of ``ground``."""

    def __init__(self, graph: Graph, ground: VertexSubset | None = None):
        self.graph = graph
        self.ground = VertexSubset.full(graph) if ground is None else ground
        self.ground.validate(graph)
        self.labels = self.ground.members
        self.size = len(self.ground)
        self._pairs: dict[float, tuple] = {}

    @property
    def full(self) -> bool:
        return self.size == self.graph.n

    def pairs(self, cutoff: float):
        """Sparse ``(i, j, d)`` for all ground pairs with ``d <= cutoff`` (local indices)."""
        cover = [c for c in self._pairs if c >= cutoff]
        if cutoff not in self._pairs and cover:
            i, j, d = self._pairs[min(cover)]
            sel = d <= cutoff + 1e-9
            return i[sel], j[sel], d[sel]
        if cutoff not in self._pairs:
            loc = self.ground.local_index
            I, J, Dv = [], [], []
            chunk = max(1, (1 << 22) // max(self.graph.n, 1))
            for lo in range(0, self.size, chunk):
                src = self.labels[lo:lo + chunk]
                d = csgraph.dijkstra(self.graph.adjacency, directed=False, indices=src,
                                     unweighted=True, limit=float(cutoff) + 1e-9)
                r, c = np.nonzero(np.isfinite(d))
                keep = loc[c] >= 0
                I.append(r[keep] + lo)
                J.append(loc[c[keep]])
                Dv.append(d[r[keep], c[keep]])
            self._pairs[cutoff] = (np.concatenate(I), np.concatenate(J), np.concatenate(Dv))
        return self._pairs[cutoff]

    def row(self, i: int) -> np.ndarray:
        d = csgraph.dijkstra(self.graph.adjacency, directed=False, indices=[int(self.labels[i])], unweighted=True)
        return d[0, self.labels]

    def ball_count(self, i: int, r: float) -> int:
        d = csgraph.dijkstra(self.graph.adjacency, directed=False, indices=[int(self.labels[i])],
                             unweighted=True, limit=float(r) + 1e-9)
        return int(np.count_nonzero(np.isfinite(d[0, self.labels])))


Metric = DenseMetric | GraphMetric


# -------------------------------------------------------------- partitions

@dataclass(frozen=True, eq=False)
class Partition:
    """Blocks over a metric's points (local indices), in carving order."""

    assignment: np.ndarray
    centers: np.ndarray
    tau: float
    radius: float

    @property
    def n_blocks(self) -> int:
        return int(self.centers.size)

    @cached_property
    def blocks(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        cuts = np.searchsorted(self.assignment[order], np.arange(1, self.n_blocks))
        return np.split(order, cuts)

    def block_of(self, i: int) -> int:
        return int(self.assignment[i])


def _carve(metric: Metric, tau: float, rank: np.ndarray, R: float) -> Partition:
    i, j, d = metric.pairs(tau)
    sel = d <= R
    # point i joins the center j of smallest rank with d(i, j) <= R
    best = np.full(metric.size, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(best, i[sel], rank[j[sel]])
    center_of_rank = np.empty(metric.size, dtype=np.int64)
    center_of_rank[rank] = np.arange(metric.size)
    used_ranks, assignment = np.unique(best, return_inverse=True)
    return Partition(assignment.astype(np.int64), center_of_rank[used_ranks], float(tau), float(R))


def _draw(metric: Metric, tau: float, gen: np.random.Generator):
    rank = gen.permutation(metric.size)
    R = tau / 4 + (tau / 4) * gen.random()
    return rank, R


def ckr_partition(metric: Metric, tau: float, seed: int, check: bool = True) -> Partition:
    """Random carving partition at scale ``tau`` from the stream ``(seed, EMBED_SALT, 0)``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    rank, R = _draw(metric, tau, rngmod.generator(seed, EMBED_SALT, 0))
    p = _carve(metric, tau, rank, R)
    if check:
        check_partition(metric, p)
    return p


def check_partition(metric: Metric, p: Partition) -> None:
    """Assert blocks are disjoint, covering and of diameter below ``tau``."""
    if p.assignment.shape != (metric.size,) or p.assignment.min(initial=0) < 0:
        raise AssertionError("partition does not cover the ground set")
    sizes = np.bincount(p.assignment, minlength=p.n_blocks)
    if np.any(sizes == 0):
        raise AssertionError("empty block retained")
    # every same-block pair must appear among the pairs at distance < tau
    i, j, d = metric.pairs(p.tau)
    close_same = np.count_nonzero((p.assignment[i] == p.assignment[j]) & (d < p.tau))
    if close_same != int(np.sum(sizes.astype(np.int64) ** 2)):
        raise AssertionError("a block has diameter >= tau")


def complement_distance(metric: Metric, p: Partition) -> np.ndarray:
    """``d(x, X \\ P(x))`` per point; ``0`` when the block is the whole ground set."""
    out = np.full(metric.size, np.inf)
    if p.n_blocks == 1:
        return np.zeros(metric.size)
    i, j, d = metric.pairs(p.tau)
    diff = p.assignment[i] != p.assignment[j]
    np.minimum.at(out, i[diff], d[diff])
    for x in np.flatnonzero(~np.isfinite(out)):
        row = metric.row(int(x))
        out[x] = row[p.assignment != p.assignment[x]].min()
    return out


def coordinate_map(metric: Metric, p: Partition, bernoulli_seed: int | None = None,
                   alpha: np.ndarray | None = None) -> np.ndarray:
    """``F(x) = alpha_{P(x)} * d(x, X \\ P(x))`` with fair bits per block."""
    if alpha is None:
        alpha = rngmod.generator(bernoulli_seed or 0, EMBED_SALT, 1).integers(0, 2, p.n_blocks)
    alpha = np.asarray(alpha)
    if alpha.shape != (p.n_blocks,):
        raise ValueError("one bit per block is required")
    return alpha[p.assignment] * complement_distance(metric, p)


def lipschitz_constant(metric: Metric, values: np.ndarray) -> float:
    """``max |F(x)-F(y)| / d(x,y)`` over distinct pairs.

    Exhaustive on small grounds; on a full graph ground the maximum over edges
    is exact because the metric is a path metric.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None, :]
    if isinstance(metric, GraphMetric) and metric.full:
        e = metric.graph.edges
        return float(np.abs(values[:, e[:, 0]] - values[:, e[:, 1]]).max(initial=0.0))
    if metric.size > EXHAUSTIVE_LIPSCHITZ:
        raise GraphError("exhaustive Lipschitz check refused on a large non-path ground")
    D = metric.D if isinstance(metric, DenseMetric) else np.vstack([metric.row(i) for i in range(metric.size)])
    off = ~np.eye(metric.size, dtype=bool)
    best = 0.0
    for v in values:
        diff = np.abs(v[:, None] - v[None, :])
        best = max(best, float((diff[off] / D[off]).max(initial=0.0)))
    return best


# ---------------------------------------------------------------- padding

def padding_epsilon(metric: Metric, tau: float, i: int) -> tuple[float, float]:
    """``(epsilon(x), log(e|B(x,5tau/8)|/|B(x,tau/8)|))`` with ``delta = 1/2``."""
    big = metric.ball_count(i, 5 * tau / 8)
    small = metric.ball_count(i, tau / 8)
    L = 1.0 + math.log(big / small)
    return 1.0 / (32.0 * L), L


@dataclass(frozen=True)
class PaddingEstimate:
    point: int
    epsilon: float
    failure_rate: float
    stderr: float
    bound: float
    n_samples: int


def padding_probability(metric: Metric, tau: float, points, epsilon=None, n_samples: int = 1000,
                        seed: int = 0, check: bool = True) -> list[PaddingEstimate]:
    """Estimate ``Pr[B(x, eps*tau) not inside P(x)]`` for each local point index.

    ``epsilon`` defaults to the set value per point, where the analytic bound
    ``16 eps log(e|B(5tau/8)|/|B(tau/8)|)`` equals 1/2.  Every sampled partition
    is also checked for the block diameter contract when ``check`` is set.
    """
    points = np.atleast_1d(np.asarray(points, dtype=np.int64))
    eps, logs = [], []
    for k, x in enumerate(points):
        e, L = padding_epsilon(metric, tau, int(x))
        if epsilon is not None:
            e = float(np.broadcast_to(np.asarray(epsilon, dtype=float), points.shape)[k])
        if e > 1 / 8:
            raise ValueError("epsilon must not exceed 1/8")
        eps.append(e)
        logs.append(L)
    i, j, d = metric.pairs(tau)
    balls = []
    for x, e in zip(points, eps):
        sel = (i == x) & (d <= e * tau)
        balls.append(j[sel])
    fails = np.zeros(points.size)
    for s in range(n_samples):
        rank, R = _draw(metric, tau, rngmod.generator(seed, EMBED_SALT, s, 0))
        p = _carve(metric, tau, rank, R)
        if check:
            check_partition(metric, p)
        for k, x in enumerate(points):
            fails[k] += bool(np.any(p.assignment[balls[k]] != p.assignment[x]))
    out = []
    for k, x in enumerate(points):
        q = fails[k] / n_samples
        out.append(PaddingEstimate(int(x), eps[k], float(q), math.sqrt(q * (1 - q) / n_samples),
                                   16 * eps[k] * logs[k], n_samples))
    return out


# ---------------------------------------------------------------- ensembles

def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


@dataclass(eq=False)
class EmbeddingEnsemble:
    """``m`` coordinate maps over ``labels``; the embedding is ``coords[:, x] / sqrt(m)``."""

    labels: np.ndarray
    coords: np.ndarray
    tau: float
    seed: int
    provenance: list[dict] = field(default_factory=list)

    @property
    def m(self) -> int:
        return int(self.coords.shape[0])

    @cached_property
    def _index(self) -> dict[int, int]:
        return {int(v): i for i, v in enumerate(self.labels)}

    def local(self, v: int) -> int:
        return self._index[int(v)]

    def point(self, v: int) -> np.ndarray:
        return self.coords[:, self.local(v)] / math.sqrt(self.m)

    def distance(self, x: int, y: int) -> float:
        return float(np.linalg.norm(self.point(x) - self.point(y)))

    def squared_distances(self, xs, ys) -> np.ndarray:
        """Squared embedded distances for label pairs; the mean over samples of ``|F(x)-F(y)|^2``."""
        a = np.array([self.local(v) for v in np.atleast_1d(xs)])
        b = np.array([self.local(v) for v in np.atleast_1d(ys)])
        diff = self.coords[:, a] - self.coords[:, b]
        return np.einsum("ij,ij->j", diff, diff) / self.m

    def sample_squared_differences(self, x: int, y: int) -> np.ndarray:
        return (self.coords[:, self.local(x)] - self.coords[:, self.local(y)]) ** 2

    def gram(self) -> np.ndarray:
        return self.coords.T @ self.coords / self.m

    def pairwise_sq(self) -> np.ndarray:
        G = self.gram()
        dg = np.diag(G)
        return np.maximum(dg[:, None] + dg[None, :] - 2 * G, 0.0)

    def save(self, stem) -> Path:
        """Write ``<stem>.npy`` (labels row, then coordinates) and ``<stem>.json`` (metadata)."""
        stem = str(stem)
        np.save(stem + ".npy", np.vstack([self.labels[None, :].astype(float), self.coords]))
        meta = {"tau": self.tau, "seed": self.seed, "m": self.m, "points": int(self.labels.size),
                "provenance": self.provenance}
        out = Path(stem + ".json")
        out.write_text(json.dumps(meta, indent=1))
        return out

    @classmethod
    def load(cls, stem) -> "EmbeddingEnsemble":
        stem = str(stem)
        for ext in (".json", ".npy"):
            if stem.endswith(ext):
                stem = stem[:-len(ext)]
        meta = json.loads(Path(stem + ".json").read_text())
        arr = np.load(stem + ".npy")
        return cls(arr[0].astype(np.int64), arr[1:], float(meta["tau"]), int(meta["seed"]), meta["provenance"])


def threshold_map(metric: Metric, tau: float, m: int, seed: int, check: bool = True) -> EmbeddingEnsemble:
    """``m`` independent (partition, bits) samples.  Sample ``s`` uses stream ``(seed, EMBED_SALT, s)``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if tau <= 0:
        raise ValueError("tau must be positive")
    coords = np.empty((m, metric.size))
    prov = []
    for s in range(m):
        gen = rngmod.generator(seed, EMBED_SALT, s)
        rank, R = _draw(metric, tau, gen)
        p = _carve(metric, tau, rank, R)
        if check:
            check_partition(metric, p)
        alpha = gen.integers(0, 2, p.n_blocks)
        coords[s] = alpha[p.assignment] * complement_distance(metric, p)
        prov.append({"index": s, "radius": R, "permutation": _digest(rank), "bits": _digest(alpha)})
    return EmbeddingEnsemble(np.asarray(metric.labels).copy(), coords, float(tau), int(seed), prov)


def scale_family(g: Graph, ground: VertexSubset | None, k_max: int, m: int, seed: int,
                 k_min: int = 0) -> dict[int, EmbeddingEnsemble]:
    """Threshold ensembles at ``tau = 8^k`` for ``k_min <= k <= k_max``."""
    metric = GraphMetric(g, ground)
    return {k: threshold_map(metric, float(8 ** k), m, rngmod.derive_seed(seed, k)) for k in range(k_min, k_max + 1)}


@dataclass(frozen=True)
class CoLipschitzReport:
    k: int
    pairs: int
    violations: int
    rate: float
    slack: float


def co_lipschitz_report(ens: EmbeddingEnsemble, g: Graph, k: int, slack: float = 0.5,
                        dist: np.ndarray | None = None) -> CoLipschitzReport:
    """Share of pairs with ``d >= 8^k`` whose embedded distance falls below
    ``slack * 8^k / (128 (1 + phi_x(k)))``.  ``dist`` is the ground distance matrix."""
    if k < 1:
        raise ValueError("the growth target needs k >= 1")
    tau = 8.0 ** k
    labels = ens.labels
    if dist is None:
        dist = GraphMetric(g, VertexSubset.from_vertices(g, labels))
        dist = np.vstack([dist.row(i) for i in range(labels.size)])
    phi = growth_profile_table(g, labels, [k])[:, 0]
    target = slack * tau / (128.0 * (1.0 + phi))
    emb = np.sqrt(ens.pairwise_sq())
    far = dist >= tau
    bad = far & (emb < target[:, None])
    n_far = int(np.count_nonzero(far))
    n_bad = int(np.count_nonzero(bad))
    return CoLipschitzReport(k, n_far, n_bad, n_bad / n_far if n_far else 0.0, slack)


# ----------------------------------------------------------------- oracle

def brute_force_oracle(D, tau, x: int, y: int) -> Fraction:
    """Exact ``E|F(x)-F(y)|^2`` on a tiny metric (at most six points).

    Enumerates every permutation, integrates ``R`` over the subintervals of
    ``[tau/4, tau/2)`` cut by the pairwise distances, and averages over bits.
    """
    D = [[Fraction(v) for v in row] for row in np.asarray(D, dtype=object).tolist()]
    n = len(D)
    if n > ORACLE_MAX_POINTS:
        raise ValueError(f"oracle refused: {n} points exceeds {ORACLE_MAX_POINTS}")
    tau = Fraction(tau)
    if x == y:
        return Fraction(0)
    lo, hi = tau / 4, tau / 2
    cuts = sorted({lo, hi} | {D[a][b] for a in range(n) for b in range(n) if lo < D[a][b] < hi})
    total = Fraction(0)
    perms = list(itertools.permutations(range(n)))
    for a, b in zip(cuts, cuts[1:]):
        R = a  # partitions are constant on [a, b) since balls are closed
        weight = (b - a) / (hi - lo)
        acc = Fraction(0)
        for perm in perms:
            owner = [None] * n
            for c in perm:
                for v in range(n):
                    if owner[v] is None and D[c][v] <= R:
                        owner[v] = c
            def gap(v):
                others = [D[v][u] for u in range(n) if owner[u] != owner[v]]
                return min(others) if others else Fraction(0)
            fx, fy = gap(x), gap(y)
            if owner[x] == owner[y]:
                acc += (fx - fy) ** 2 / 2
            else:
                acc += (fx ** 2 + fy ** 2 + (fx - fy) ** 2) / 4
        total += weight * acc / len(perms)
    return total
