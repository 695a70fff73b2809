"""Simple and restricted random walks: exact laws, sampling, displacement, entropy.

A restricted walk on ``S`` moves from ``x`` to each neighbor inside ``S`` with
probability ``1/deg(x)`` and holds with the remaining mass ``|N(x) \\ S|/deg(x)``.
It is reversible with stationary measure ``deg(x)/mu(S)``.  With ``S = V`` it is
the simple random walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .graph import Graph, GraphError, RootedGraph, VertexSubset, all_pairs_distances, bfs_distances
from .rng import UniformStreams, generator

PUSHFORWARD_CAP = 200_000
DENSE_CAP = 5_000
MASS_TOL = 1e-9
WALK_SALT = 0x57A1
BATCH = 4096
DistanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class CapError(GraphError):
    """An exact computation was refused because the state space is too large."""


class MixingError(RuntimeError):
    """The walk does not converge to stationarity (periodic chain or step cap reached)."""


class RestrictedWalk:
    """The walk on ``graph`` restricted to ``subset`` (default: all vertices)."""

    def __init__(self, graph: Graph, subset: VertexSubset | None = None):
        subset = VertexSubset.full(graph) if subset is None else subset
        subset.validate(graph)
        if len(subset) == 0:
            raise GraphError("restricted walk needs a nonempty subset")
        self.graph = graph
        self.subset = subset

    @property
    def members(self) -> np.ndarray:
        return self.subset.members

    @property
    def size(self) -> int:
        return len(self.subset)

    def _local(self, x: int) -> int:
        self.graph.check_vertex(x)
        i = int(self.subset.local_index[int(x)])
        if i < 0:
            raise GraphError(f"vertex {x} is not in the walk's subset")
        return i

    @cached_property
    def transition(self) -> sp.csr_matrix:
        """Transition matrix indexed by positions in :attr:`members`."""
        g, mem, loc = self.graph, self.members, self.subset.local_index
        deg = g.degrees[mem]
        rows = np.repeat(np.arange(mem.size), deg)
        starts = g.indptr[mem]
        offsets = np.repeat(starts - np.cumsum(deg) + deg, deg) + np.arange(int(deg.sum()))
        cols = loc[g.indices[offsets]]
        keep = cols >= 0
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
        vals = inv[rows[keep]]
        inside = np.bincount(rows[keep], minlength=mem.size)
        hold = np.where(deg > 0, (deg - inside) * inv, 1.0)
        P = sp.csr_matrix((vals, (rows[keep], cols[keep])), shape=(mem.size, mem.size))
        P = (P + sp.diags(hold)).tocsr()
        P.sum_duplicates()
        P.sort_indices()
        return P

    @cached_property
    def transition_T(self) -> sp.csr_matrix:
        return self.transition.T.tocsr()

    @cached_property
    def stationary_weights(self) -> np.ndarray:
        deg = self.graph.degrees[self.members].astype(float)
        if self.subset.mu == 0:
            return np.full(self.size, 1.0 / self.size)
        return deg / self.subset.mu


def as_walk(w: RestrictedWalk | Graph) -> RestrictedWalk:
    return w if isinstance(w, RestrictedWalk) else RestrictedWalk(w)


@dataclass(frozen=True, eq=False)
class DistributionVector:
    """Probabilities over the members of ``support`` (in increasing vertex order)."""

    support: VertexSubset
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (len(self.support),):
            raise ValueError("one probability per support member is required")
        if np.any(p < -1e-15):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def point(cls, w: RestrictedWalk, x: int) -> "DistributionVector":
        p = np.zeros(w.size)
        p[w._local(x)] = 1.0
        return cls(w.subset, p)

    def __getitem__(self, v: int) -> float:
        i = int(self.support.local_index[int(v)])
        return float(self.probabilities[i]) if i >= 0 else 0.0

    def as_dict(self, tol: float = 0.0) -> dict[int, float]:
        mem = self.support.members
        return {int(mem[i]): float(p) for i, p in enumerate(self.probabilities) if p > tol}

    def dense(self) -> np.ndarray:
        out = np.zeros(self.support.mask.size)
        out[self.support.members] = self.probabilities
        return out


@dataclass(frozen=True)
class Trajectory:
    vertices: np.ndarray
    master_seed: int
    index: int

    @property
    def length(self) -> int:
        return int(self.vertices.size) - 1


@dataclass(frozen=True)
class MSDEstimate:
    t: int
    value: float
    stderr: float
    n_samples: int
    mode: str


# ------------------------------------------------------------- exact laws

def restricted_transition(w: RestrictedWalk, x: int) -> DistributionVector:
    """Exact one-step law from ``x``."""
    i = w._local(x)
    P = w.transition
    row = np.zeros(w.size)
    lo, hi = P.indptr[i], P.indptr[i + 1]
    row[P.indices[lo:hi]] = P.data[lo:hi]
    return DistributionVector(w.subset, row)


def stationary_measure(w: RestrictedWalk) -> DistributionVector:
    return DistributionVector(w.subset, w.stationary_weights)


def _check_cap(w: RestrictedWalk, cap: int, what: str) -> None:
    if w.size > cap:
        raise CapError(f"{what} refused: {w.size} states exceeds cap {cap}")


def exact_pushforward(w: RestrictedWalk, init: DistributionVector, t: int,
                      cap: int = PUSHFORWARD_CAP) -> DistributionVector:
    """Law of ``Z_t`` given ``Z_0 ~ init``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    _check_cap(w, cap, "exact pushforward")
    if not np.array_equal(init.support.mask, w.subset.mask):
        raise GraphError("initial law must live on the walk's subset")
    p = np.array(init.probabilities)
    PT = w.transition_T
    for _ in range(t):
        p = PT @ p
    return DistributionVector(w.subset, p)


def dense_transition(w: RestrictedWalk, cap: int = DENSE_CAP) -> np.ndarray:
    _check_cap(w, cap, "dense transition")
    return w.transition.toarray()


def transition_power(w: RestrictedWalk, t: int, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``P^t`` by binary exponentiation."""
    P = dense_transition(w, cap)
    return np.linalg.matrix_power(P, t)


# ------------------------------------------------------------ Monte Carlo

def _step(g: Graph, mask: np.ndarray, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    if g.indices.size == 0:
        return x
    d = g.degrees[x]
    j = np.minimum((u * d).astype(np.int64), np.maximum(d - 1, 0))
    pos = np.minimum(g.indptr[x] + j, g.indices.size - 1)
    nb = g.indices[pos]
    return np.where((d > 0) & mask[nb], nb, x)


def _start_vertices(w: RestrictedWalk, start, streams: UniformStreams) -> np.ndarray:
    if isinstance(start, str):
        if start != "stationary":
            raise ValueError("start must be a vertex or 'stationary'")
        cdf = np.cumsum(w.stationary_weights)
        cdf /= cdf[-1]
        pos = np.searchsorted(cdf, streams.next(), side="right")
        return w.members[np.minimum(pos, w.size - 1)]
    if isinstance(start, np.ndarray):
        for v in np.unique(start):
            w._local(int(v))
        return start.astype(np.int64)
    x = int(start)
    w._local(x)
    return np.full(streams.indices.size, x, dtype=np.int64)


def simulate(w: RestrictedWalk, start, t: int, indices, master_seed: int,
             observe: Sequence[int] | None = None, watch: int | None = None,
             batch: int = BATCH) -> Iterator[dict]:
    """Run trajectories ``indices`` to time ``t`` in vectorized batches.

    Yields one record per batch with keys ``index``, ``x0``, ``positions``
    (shape ``(len(observe), b)``; all times when ``observe`` is None) and, when a
    ``watch`` vertex is given, ``visited``: whether it was occupied at any time
    ``0..t``.  ``start`` is a vertex, ``"stationary"`` or an array of start
    vertices aligned with ``indices``.  Step ``s`` of trajectory ``i`` consumes the ``s``-th uniform of
    stream ``(master_seed, WALK_SALT, i)``, after one draw for a stationary start.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    indices = np.asarray(indices, dtype=np.int64)
    if isinstance(start, np.ndarray) and start.shape != indices.shape:
        raise ValueError("a start array needs one vertex per trajectory index")
    times = np.arange(t + 1) if observe is None else np.asarray(sorted(set(int(s) for s in observe)))
    if times.size and (times[0] < 0 or times[-1] > t):
        raise ValueError("observation times must lie in [0, t]")
    g, mask = w.graph, w.subset.mask
    for lo in range(0, indices.size, batch):
        idx = indices[lo:lo + batch]
        streams = UniformStreams(master_seed, idx, salt=WALK_SALT, block=min(1024, max(t, 1)))
        x = _start_vertices(w, start[lo:lo + batch] if isinstance(start, np.ndarray) else start, streams)
        x0 = x.copy()
        out = np.empty((times.size, idx.size), dtype=np.int64)
        visited = (x == watch) if watch is not None else None
        k = 0
        if k < times.size and times[k] == 0:
            out[k] = x
            k += 1
        for s in range(1, t + 1):
            x = _step(g, mask, x, streams.next())
            if visited is not None:
                visited |= x == watch
            if k < times.size and times[k] == s:
                out[k] = x
                k += 1
        rec = {"index": idx, "x0": x0, "times": times, "positions": out}
        if visited is not None:
            rec["visited"] = visited
        yield rec


def sample_trajectories(w: RestrictedWalk, start, t: int, count: int, master_seed: int,
                        first_index: int = 0) -> Iterator[Trajectory]:
    """Trajectories ``first_index .. first_index+count-1``, each reproducible alone."""
    if count < 1:
        raise ValueError("count must be at least 1")
    w = as_walk(w)
    for rec in simulate(w, start, t, np.arange(first_index, first_index + count), master_seed):
        for j, i in enumerate(rec["index"]):
            yield Trajectory(rec["positions"][:, j].copy(), int(master_seed), int(i))


def pair_distances(g: Graph, xs: np.ndarray, ys: np.ndarray, bound: int | None = None,
                   distance_fn: DistanceFn | None = None) -> np.ndarray:
    """``d(xs[i], ys[i])`` for every ``i`` (``inf`` when farther than ``bound``)."""
    xs, ys = np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64)
    if distance_fn is not None:
        return np.asarray(distance_fn(xs, ys), dtype=float)
    out = np.empty(xs.size)
    src, inv = np.unique(xs, return_inverse=True)
    limit = np.inf if bound is None else float(bound) + 0.5
    chunk = max(1, (1 << 23) // max(g.n, 1))
    for lo in range(0, src.size, chunk):
        d = csgraph.dijkstra(g.adjacency, directed=False, indices=src[lo:lo + chunk],
                             unweighted=True, limit=limit)
        sel = np.flatnonzero((inv >= lo) & (inv < lo + chunk))
        out[sel] = d[inv[sel] - lo, ys[sel]]
    return out


# -------------------------------------------------------- displacement

def mean_square_displacement(w: RestrictedWalk | Graph, start, t, mode: str = "exact",
                             count: int = 10_000, master_seed: int = 0,
                             distance_fn: DistanceFn | None = None, cap: int | None = None):
    """``E[d(Z_0, Z_t)^2]`` for one ``t`` or a sequence of times.

    ``start`` is a vertex or ``"stationary"``.  Exact mode pushes the law forward
    from a vertex start; from a stationary start it uses the spectral expansion of
    the reversible chain on the dense state space.  Monte Carlo mode returns the
    sample mean and its standard error.
    """
    w = as_walk(w)
    scalar = np.isscalar(t)
    times = [int(t)] if scalar else [int(s) for s in t]
    if any(s < 0 for s in times):
        raise ValueError("times must be non-negative")
    if mode == "exact":
        if isinstance(start, str):
            vals = _msd_exact_stationary(w, times, cap or DENSE_CAP)
        else:
            vals = _msd_exact_from(w, int(start), times, cap or PUSHFORWARD_CAP)
        res = [MSDEstimate(s, float(v), 0.0, 0, "exact") for s, v in zip(times, vals)]
    elif mode == "monte_carlo":
        res = _msd_monte_carlo(w, start, times, count, master_seed, distance_fn)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return res[0] if scalar else res


def _msd_exact_from(w: RestrictedWalk, x: int, times: list[int], cap: int) -> list[float]:
    _check_cap(w, cap, "exact displacement")
    d2 = bfs_distances(w.graph, x)[w.members].astype(float) ** 2
    p = DistributionVector.point(w, x).probabilities.copy()
    PT = w.transition_T
    out, cur = {}, 0
    for s in sorted(set(times)):
        for _ in range(s - cur):
            p = PT @ p
        cur = s
        out[s] = float(p @ d2)
    return [out[s] for s in times]


def msd_from_starts(w: RestrictedWalk | Graph, starts, t: int, block: int = 256,
                    cap: int = PUSHFORWARD_CAP) -> np.ndarray:
    """Exact ``E[d(Z_0, Z_t)^2 | Z_0 = x]`` for each start ``x`` (block pushforward)."""
    w = as_walk(w)
    _check_cap(w, cap, "exact displacement")
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    loc = np.array([w._local(int(x)) for x in starts], dtype=np.int64)
    PT = w.transition_T
    out = np.empty(starts.size)
    for lo in range(0, starts.size, block):
        src = starts[lo:lo + block]
        X = np.zeros((w.size, src.size))
        X[loc[lo:lo + block], np.arange(src.size)] = 1.0
        for _ in range(t):
            X = PT @ X
        d = csgraph.dijkstra(w.graph.adjacency, directed=False, indices=src, unweighted=True,
                             limit=t + 0.5)[:, w.members]
        d2 = np.where(np.isfinite(d), d, 0.0) ** 2
        out[lo:lo + block] = np.einsum("ij,ji->i", d2, X)
    return out


def spectral_decomposition(w: RestrictedWalk, cap: int = DENSE_CAP) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenpairs of ``D^(1/2) P D^(-1/2)`` (symmetric by reversibility).

    States of zero stationary weight (isolated members) are never entered, so the
    decomposition runs over the returned ``keep`` mask of positive-weight states.
    """
    _check_cap(w, cap, "spectral decomposition")
    pi = w.stationary_weights
    keep = pi > 0
    sq = np.sqrt(pi[keep])
    P = w.transition.toarray()[np.ix_(keep, keep)]
    A = (sq[:, None] * P) / sq[None, :]
    lam, V = np.linalg.eigh((A + A.T) / 2)
    return lam, V, keep


def _msd_exact_stationary(w: RestrictedWalk, times: list[int], cap: int,
                          start_weights: np.ndarray | None = None) -> list[float]:
    # sum_x pi(x) a(x) P^t(x,y) d(x,y)^2 = sum_k lam_k^t <a sqrt(pi) v_k, D^2 sqrt(pi) v_k>
    lam, V, keep = spectral_decomposition(w, cap)
    sq = np.sqrt(w.stationary_weights[keep])
    D = all_pairs_distances(w.graph, w.members[keep], cap=cap)
    D2 = np.where(np.isfinite(D), D, 0.0) ** 2  # unreachable pairs carry no transition mass
    right = sq[:, None] * V
    left = right if start_weights is None else np.asarray(start_weights, dtype=float)[keep][:, None] * right
    c = np.einsum("ik,ik->k", left, D2 @ right)
    return [float(np.sum(lam ** s * c)) if s > 0 else 0.0 for s in times]


def weighted_stationary_msd(w: RestrictedWalk, times: Sequence[int], start_weights: np.ndarray,
                            cap: int = DENSE_CAP) -> list[float]:
    """``E[d(Z_0, Z_t)^2 a(Z_0)]`` for the stationary walk; ``a`` indexed like ``w.members``."""
    return _msd_exact_stationary(w, [int(s) for s in times], cap, start_weights)


def _msd_monte_carlo(w: RestrictedWalk, start, times: list[int], count: int, master_seed: int,
                     distance_fn: DistanceFn | None) -> list[MSDEstimate]:
    if count < 2:
        raise ValueError("Monte Carlo mode needs at least two samples")
    uniq = sorted(set(times))
    sums = np.zeros(len(uniq))
    sq = np.zeros(len(uniq))
    for rec in simulate(w, start, max(uniq), np.arange(count), master_seed, observe=uniq):
        for j, s in enumerate(uniq):
            d = pair_distances(w.graph, rec["x0"], rec["positions"][j], bound=s, distance_fn=distance_fn)
            d2 = d ** 2
            sums[j] += d2.sum()
            sq[j] += (d2 ** 2).sum()
    mean = sums / count
    var = np.maximum(sq / count - mean ** 2, 0.0) * count / (count - 1)
    se = np.sqrt(var / count)
    by = {s: MSDEstimate(s, float(mean[j]), float(se[j]), count, "monte_carlo") for j, s in enumerate(uniq)}
    return [by[s] for s in times]


# ---------------------------------------------------------------- entropy

def entropy(dist: DistributionVector | np.ndarray) -> float:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    p = dist.probabilities if isinstance(dist, DistributionVector) else np.asarray(dist, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _row_entropies(Q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(Q > 0, np.log(np.where(Q > 0, Q, 1.0)), 0.0)
    return -np.sum(Q * logs, axis=1)


def joint_entropy(w: RestrictedWalk, t: int, cap: int = DENSE_CAP) -> float:
    """``H(Z_1, Z_t)`` for the stationary walk, summing over all state pairs."""
    if t < 1:
        raise ValueError("t must be at least 1")
    pi = w.stationary_weights
    J = pi[:, None] * transition_power(w, t - 1, cap)
    return entropy(J.ravel())


def conditional_entropy(w: RestrictedWalk, s: int, cap: int = DENSE_CAP) -> float:
    """``H(Z_s | Z_0)`` with ``Z_0`` stationary: ``sum_x pi(x) H(P^s(x, .))``."""
    Q = transition_power(w, s, cap)
    return float(w.stationary_weights @ _row_entropies(Q))


# ------------------------------------------------------ hitting / mixing

def hitting_times(g: Graph, cap: int = DENSE_CAP) -> np.ndarray:
    """Matrix ``E_x[tau_y]`` of expected hitting times of the simple walk.

    Uses the fundamental matrix ``Z = (I - P + 1 pi^T)^(-1)``:
    ``E_x[tau_y] = (Z_yy - Z_xy) / pi_y``.
    """
    g.require_connected()
    w = RestrictedWalk(g)
    P = dense_transition(w, cap)
    pi = w.stationary_weights
    Z = np.linalg.inv(np.eye(g.n) - P + np.ones((g.n, 1)) * pi[None, :])
    return (np.diag(Z)[None, :] - Z) / pi[None, :]


def hitting_time_max(g: Graph, cap: int = DENSE_CAP) -> float:
    """``max_{x,y} E_x[tau_y]``; checked against ``2 Delta |V|^2``."""
    if g.n <= 1:
        return 0.0
    h = float(hitting_times(g, cap).max())
    bound = 2 * g.max_degree * g.n ** 2
    if h > bound * (1 + 1e-9):
        raise AssertionError(f"hitting time {h} exceeds 2*Delta*|V|^2 = {bound}")
    return h


def mixing_time_tv(g: Graph, eps: float = 0.25, lazy: bool = False, starts=None,
                   max_t: int = 100_000, cap: int = DENSE_CAP) -> int:
    """Least ``t`` with ``max_x TV(P^t(x, .), pi) <= eps``.

    With ``starts`` only those rows are tracked and the result is a lower bound
    on the true mixing time.
    """
    g.require_connected()
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    w = RestrictedWalk(g)
    if not lazy and g.n > 1 and g.is_bipartite():
        raise MixingError("the non-lazy walk on a bipartite graph is periodic and never mixes")
    rows = np.arange(g.n) if starts is None else np.asarray(starts, dtype=np.int64)
    if rows.size * g.n > cap * cap:
        raise CapError("too many tracked starts for dense mixing computation")
    P = w.transition
    if lazy:
        P = (P + sp.identity(g.n, format="csr")) * 0.5
    pi = w.stationary_weights
    Q = np.zeros((rows.size, g.n))
    Q[np.arange(rows.size), rows] = 1.0
    tol = 1e-12
    for t in range(0, max_t + 1):
        tv = 0.5 * np.abs(Q - pi[None, :]).sum(axis=1).max()
        if tv <= eps + tol:
            return t
        Q = np.asarray(Q @ P)
    raise MixingError(f"total variation still above {eps} after {max_t} steps")


# --------------------------------------------------------------- escape

@dataclass(frozen=True)
class EscapeStatistics:
    t: int
    n_samples: int
    escape_msd: float
    escape_msd_stderr: float
    root_visit_probability: float
    root_visit_stderr: float
    samples: np.ndarray
    starts: np.ndarray
    per_start: int = 1

    def per_start_means(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct start draws and the mean escape sample of each."""
        m = self.per_start
        return self.starts[::m], self.samples.reshape(-1, m).mean(axis=1)


def escape_statistics(h: RootedGraph, t: int, count: int, seed: int,
                      distance_fn: DistanceFn | None = None, per_start: int = 1) -> EscapeStatistics:
    """Estimate ``E[d(X_0,X_t)^2 1{root avoided}]`` and ``Pr[root visited by t]``.

    ``count`` stationary starts are drawn from stream ``(seed, WALK_SALT, 2**63)``
    when ``per_start > 1`` and each runs ``per_start`` trajectories; otherwise
    every trajectory draws its own stationary start.  ``samples`` holds each
    trajectory's indicator-weighted squared displacement.
    """
    if count < 1 or per_start < 1:
        raise ValueError("count and per_start must be at least 1")
    w = RestrictedWalk(h.graph)
    total = count * per_start
    if per_start == 1:
        start = "stationary"
    else:
        cdf = np.cumsum(w.stationary_weights)
        u = generator(seed, WALK_SALT, 2**63).random(count)
        draws = w.members[np.minimum(np.searchsorted(cdf / cdf[-1], u, side="right"), w.size - 1)]
        start = np.repeat(draws, per_start)
    vals = np.empty(total)
    vis = np.empty(total, dtype=bool)
    starts = np.empty(total, dtype=np.int64)
    for rec in simulate(w, start, t, np.arange(total), seed, observe=[t], watch=h.root):
        idx = rec["index"]
        d = pair_distances(h.graph, rec["x0"], rec["positions"][-1], bound=t, distance_fn=distance_fn)
        vis[idx] = rec["visited"]
        vals[idx] = np.where(rec["visited"], 0.0, d ** 2)
        starts[idx] = rec["x0"]
    se = lambda a: float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return EscapeStatistics(t, total, float(vals.mean()), se(vals), float(vis.mean()),
                            se(vis.astype(float)), vals, starts, per_start)
