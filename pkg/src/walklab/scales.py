"""Multi-scale growth functionals, martingale speed bounds and scale scanning.

Scales are indexed by ``k`` with radius ``8^k``.  For a time horizon ``n`` the
relevant window is ``alpha_n = ceil(log_8 sqrt(2n))`` to ``beta_n = ceil(log_8 2n)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.sparse import csgraph

from .graph import Graph, GraphError, VertexSubset, ball_size_table, bfs_distances
from .walk import DistributionVector, RestrictedWalk, Trajectory, mean_square_displacement, simulate

ScaleFunction = Callable[[int], float] | Mapping[int, float]


# ------------------------------------------------------------ constants

@dataclass(frozen=True)
class ScaleConstants:
    n: int
    alpha: int
    beta: int

    @classmethod
    def of(cls, n: int) -> "ScaleConstants":
        if n < 1:
            raise ValueError("n must be at least 1")
        a = 0
        while 64 ** a < 2 * n:  # 8^a >= sqrt(2n)
            a += 1
        b = 0
        while 8 ** b < 2 * n:
            b += 1
        return cls(n, a, b)

    @property
    def ks(self) -> range:
        return range(self.alpha, self.beta + 1)


# ----------------------------------------------------------- martingales

@dataclass(frozen=True)
class MartingaleDecomposition:
    forward: np.ndarray
    backward: np.ndarray
    identity_error: float
    max_increment: float

    @property
    def n(self) -> int:
        return int(self.forward.shape[0])


def _as_field(w: RestrictedWalk, f) -> np.ndarray:
    """Values of ``f`` on the walk's members as a ``(|S|, dim)`` array."""
    if callable(f):
        vals = np.array([np.atleast_1d(f(int(v))) for v in w.members], dtype=float)
    else:
        arr = np.asarray(f, dtype=float)
        if arr.shape[0] == w.graph.n:
            arr = arr[w.members]
        elif arr.shape[0] != w.size:
            raise ValueError("f must give one value per vertex or per subset member")
        vals = arr.reshape(arr.shape[0], -1)
    return vals


def martingale_decompose(traj: Trajectory | np.ndarray, f, w: RestrictedWalk) -> MartingaleDecomposition:
    """Forward and backward martingale increments of ``f`` along a ``2n``-step path.

    With ``Pf`` the one-step conditional expectation,
    ``a_i = f(Z_2i) - Pf(Z_2i-1)`` and ``b_j = f(Z_2n-2j) - Pf(Z_2n-2j+1)`` for
    ``i, j = 1..n``; the sums satisfy ``A_n - B_n = f(Z_2n) - f(Z_0)``.
    """
    path = np.asarray(traj.vertices if isinstance(traj, Trajectory) else traj, dtype=np.int64)
    if path.size % 2 == 0:
        raise ValueError("trajectory must have 2n+1 vertices")
    n = (path.size - 1) // 2
    F = _as_field(w, f)
    PF = w.transition @ F
    z = w.subset.local_index[path]
    if np.any(z < 0):
        raise GraphError("trajectory leaves the walk's subset")
    i = np.arange(1, n + 1)
    fwd = F[z[2 * i]] - PF[z[2 * i - 1]]
    bwd = F[z[2 * n - 2 * i]] - PF[z[2 * n - 2 * i + 1]]
    target = F[z[-1]] - F[z[0]]
    err = float(np.abs(fwd.sum(axis=0) - bwd.sum(axis=0) - target).max(initial=0.0))
    inc = max(np.linalg.norm(fwd, axis=1).max(initial=0.0), np.linalg.norm(bwd, axis=1).max(initial=0.0))
    return MartingaleDecomposition(fwd, bwd, err, float(inc))


def lipschitz_on_edges(g: Graph, f) -> float:
    """Exact Lipschitz constant of a vertex field under the graph metric."""
    F = np.asarray(f, dtype=float).reshape(g.n, -1)
    e = g.edges
    return float(np.linalg.norm(F[e[:, 0]] - F[e[:, 1]], axis=1).max(initial=0.0))


@dataclass(frozen=True)
class TailRow:
    lam: float
    empirical: float
    stderr: float
    bound: float
    n_samples: int

    @property
    def ok(self) -> bool:
        return self.empirical <= self.bound + 3 * self.stderr


def azuma_bound(lam: float, n: int, lip: float) -> float:
    if lip == 0:
        return 0.0 if lam > 0 else 4.0
    return 4.0 * math.exp(-lam ** 2 / (32.0 * n * lip ** 2))


def azuma_tail_check(w: RestrictedWalk, f, n: int, lambda_grid: Sequence[float], n_samples: int,
                     seed: int, lip: float | None = None) -> list[TailRow]:
    """Empirical ``Pr[|f(Z_2n) - f(Z_0)| >= lam]`` against ``4 exp(-lam^2 / (32 n Lip^2))``.

    Walks start from stationarity.  ``lip`` defaults to the edge-exact constant
    when ``f`` is defined on every vertex.
    """
    F = _as_field(w, f)
    if lip is None:
        if w.size != w.graph.n:
            raise ValueError("pass lip explicitly for fields on a proper subset")
        lip = lipschitz_on_edges(w.graph, F)
    norms = np.empty(n_samples)
    loc = w.subset.local_index
    for rec in simulate(w, "stationary", 2 * n, np.arange(n_samples), seed, observe=[2 * n]):
        disp = F[loc[rec["positions"][-1]]] - F[loc[rec["x0"]]]
        norms[rec["index"]] = np.linalg.norm(disp, axis=1)
    rows = []
    for lam in lambda_grid:
        q = float(np.mean(norms >= lam))
        rows.append(TailRow(float(lam), q, math.sqrt(q * (1 - q) / n_samples), azuma_bound(lam, n, lip), n_samples))
    return rows


# ----------------------------------------------------------- speed bounds

def _fk(f_of_k: ScaleFunction, k: int) -> float:
    return float(f_of_k[k] if isinstance(f_of_k, Mapping) else f_of_k(k))


def speed_bound_rhs(n: int, f_of_k: ScaleFunction) -> float:
    """``2n + 256 sum_{k=alpha_n}^{beta_n} 8^{2k} exp(-8^{2k} / (32 n f(k)^2))``."""
    sc = ScaleConstants.of(n)
    terms = [2.0 * n]
    for k in sc.ks:
        f = _fk(f_of_k, k)
        if f < 0:
            raise ValueError("scale function must be non-negative")
        den = 32.0 * n * f * f
        if den == 0:  # the term vanishes in the limit f -> 0+
            continue
        terms.append(256.0 * 64.0 ** k * math.exp(-(64.0 ** k) / den))
    return math.fsum(terms)


def growth_scale_function(phi_bar: ScaleFunction, lam: float) -> Callable[[int], float]:
    """``k -> 128 (1 + lam * phi_bar(k))``."""
    return lambda k: 128.0 * (1.0 + lam * _fk(phi_bar, k))


def many_scales_bound(n: int, lam: float, phi_bar: ScaleFunction) -> float:
    """``2n + 256 sum 8^{2k} exp(-8^{2k} / (lam^2 4^{k-alpha+10} (1+phi_bar(k))^2 n))``."""
    sc = ScaleConstants.of(n)
    terms = [2.0 * n]
    for k in sc.ks:
        den = lam ** 2 * 4.0 ** (k - sc.alpha + 10) * (1.0 + _fk(phi_bar, k)) ** 2 * n
        if den == 0:
            continue
        terms.append(256.0 * 64.0 ** k * math.exp(-(64.0 ** k) / den))
    return math.fsum(terms)


# ---------------------------------------------------------- growth tables

class GrowthTable:
    """Per-vertex ball sizes at radii ``8^j`` for a fixed set of centers."""

    def __init__(self, g: Graph, vertices, j_max: int):
        self.graph = g
        self.vertices = np.asarray(vertices, dtype=np.int64)
        self.j_max = j_max
        self.sizes = ball_size_table(g, self.vertices, [8 ** j for j in range(j_max + 1)])
        self._row = {int(v): i for i, v in enumerate(self.vertices)}

    def phi(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.j_max:
            raise ValueError(f"scale {k} outside the table (1..{self.j_max})")
        return np.log(self.sizes[:, k] / self.sizes[:, k - 1])

    def rows(self, vertices) -> np.ndarray:
        return np.array([self._row[int(v)] for v in vertices], dtype=np.int64)


def phi_bar(g: Graph, subset: VertexSubset, ks: Sequence[int], table: GrowthTable | None = None) -> dict[int, float]:
    """``sum_x pi(x) phi_x(k)`` with ``pi`` the restricted stationary measure on ``subset``."""
    ks = list(ks)
    if not ks:
        return {}
    mem = subset.members
    table = table or GrowthTable(g, mem, max(ks))
    pi = RestrictedWalk(g, subset).stationary_weights
    rows = table.rows(mem)
    return {k: float(pi @ table.phi(k)[rows]) for k in ks}


@dataclass
class GrowthSummary:
    subset: VertexSubset
    ks: list[int]
    lam: float
    k0: int
    bar_phi: dict[int, float]
    phi: np.ndarray
    pi: np.ndarray
    s_lambda: dict[int, np.ndarray]
    s_up: np.ndarray

    @property
    def s_up_mass(self) -> float:
        return float(self.pi[self.s_up].sum())


def growth_summary(g: Graph, subset: VertexSubset, k_range: Sequence[int], lam: float, k0: int,
                   table: GrowthTable | None = None) -> GrowthSummary:
    """Averages ``bar phi(k)``, sets ``S_lam(k)`` and ``S_up_lam(k0)`` over the given scales.

    The intersection defining ``S_up`` runs over ``k >= k0`` inside ``k_range``.
    Raises if ``pi(S_up) < 1 - 2/lam``.
    """
    ks = sorted(int(k) for k in k_range)
    mem = subset.members
    table = table or GrowthTable(g, mem, max(ks))
    rows = table.rows(mem)
    phi = np.column_stack([table.phi(k)[rows] for k in ks])
    pi = RestrictedWalk(g, subset).stationary_weights
    bar = {k: float(pi @ phi[:, j]) for j, k in enumerate(ks)}
    tol = 1e-12
    s_lam = {k: phi[:, j] <= lam * bar[k] + tol for j, k in enumerate(ks)}
    up = np.ones(mem.size, dtype=bool)
    for j, k in enumerate(ks):
        if k >= k0:
            up &= phi[:, j] <= lam * 2.0 ** (k - k0) * bar[k] + tol
    out = GrowthSummary(subset, ks, lam, k0, bar, phi, pi, s_lam, up)
    if out.s_up_mass < 1 - 2 / lam - 1e-12:
        raise AssertionError(f"pi(S_up) = {out.s_up_mass} below 1 - 2/lambda")
    return out


# ----------------------------------------------------------------- theta

def theta_profile(profile: ScaleFunction, ell: int) -> float:
    """``sum_{k=ell}^{3 ell} phi(k) 2^{ell-k}``."""
    return math.fsum(_fk(profile, k) * 2.0 ** (ell - k) for k in range(ell, 3 * ell + 1))


def theta(g: Graph, rho: int, r: int, ell: int, table: GrowthTable | None = None) -> float:
    """``theta`` of the stationary averages over the ball ``B_rho(r)``."""
    if ell < 1:
        raise ValueError("ell must be at least 1")
    S = _ball_subset(g, rho, r)
    return theta_profile(phi_bar(g, S, range(ell, 3 * ell + 1), table), ell)


def sumbound_sides(profile: Sequence[float] | Mapping[int, float], h: int, upper: int = 5) -> tuple[float, float]:
    """``(sum_{l=h}^{2h} theta(l), 2 sum_{k=h}^{upper*h} phi(k))``.

    ``profile`` maps scale to value; indexed sequences start at scale 0.
    """
    prof = dict(enumerate(profile)) if not isinstance(profile, Mapping) else dict(profile)
    get = lambda k: prof.get(k, 0.0)
    lhs = math.fsum(theta_profile(get, ell) for ell in range(h, 2 * h + 1))
    rhs = 2.0 * math.fsum(get(k) for k in range(h, upper * h + 1))
    return lhs, rhs


# --------------------------------------------------- temper / insulate

def _ball_subset(g: Graph, rho: int, r: int) -> VertexSubset:
    return VertexSubset.from_mask(g, bfs_distances(g, rho, radius=max(int(r), 0)) >= 0)


@dataclass
class TemperReport:
    n: int
    lam: float
    r: int
    alpha: int
    beta: int
    tempered: bool
    margins: dict[int, float]
    bar_phi: dict[int, float]
    insulated: bool
    shell_ratio: float
    reason: str = ""
    shell_pi: float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margins"] = {str(k): v for k, v in self.margins.items()}
        d["bar_phi"] = {str(k): v for k, v in self.bar_phi.items()}
        return d


def shell_ratio(g: Graph, rho: int, r: int, width: int) -> float:
    """``mu(B(r) \\ B(r - width)) / mu(B(r))``; an empty inner ball gives 1."""
    dist = bfs_distances(g, rho, radius=r)
    inside = dist >= 0
    deg = g.degrees
    mu = int(deg[inside].sum())
    inner = int(deg[inside & (dist <= r - width)].sum()) if r - width >= 0 else 0
    return (mu - inner) / mu if mu else 1.0


def temper_insulate_check(g: Graph, rho: int, n: int, lam: float, r: int,
                          table: GrowthTable | None = None) -> TemperReport:
    """Tempered: ``bar phi(k) <= lam 2^{k-alpha_n}`` on ``[alpha_n, beta_n]`` over ``B_rho(r)``.
    Insulated: the ``2n``-deep shell of ``B_rho(r)`` carries at most ``1/(4 lam)`` of its measure."""
    sc = ScaleConstants.of(n)
    S = _ball_subset(g, rho, r)
    bar = phi_bar(g, S, list(sc.ks), table)
    margins = {k: lam * 2.0 ** (k - sc.alpha) - bar[k] for k in sc.ks}
    tempered = all(m >= -1e-12 for m in margins.values())
    ratio = shell_ratio(g, rho, r, 2 * n)
    reason = ""
    if r <= 2 * n:
        insulated = False
        reason = "r <= 2n: the shell is the whole ball"
    else:
        insulated = ratio <= 1.0 / (4.0 * lam)
        if not insulated:
            reason = f"shell ratio {ratio:.6g} exceeds 1/(4 lambda) = {1 / (4 * lam):.6g}"
    # the restricted stationary measure of the shell equals its degree-measure share
    return TemperReport(n, lam, r, sc.alpha, sc.beta, tempered, margins, bar, insulated, ratio, reason, ratio)


# ------------------------------------------------------------ entropy

def entropy_profile(g: Graph, rho: int, t_max: int) -> np.ndarray:
    """``H(X_t)`` for the simple walk from ``rho``, ``t = 0..t_max``."""
    w = RestrictedWalk(g)
    PT = w.transition_T
    p = DistributionVector.point(w, rho).probabilities.copy()
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        q = p[p > 0]
        out[t] = -np.sum(q * np.log(q))
        if t < t_max:
            p = PT @ p
    return out


# ------------------------------------------------------------- scanning

@dataclass
class ScanConfig:
    """Grid for the per-instance scale scan.

    Defaults follow the unscaled functional: ``k`` in ``[9k0, 10k0]``, radii
    ``base^k``, shell width ``8^{4k0+3}``, ``ell`` in ``[k0, 2k0]`` and ``n`` in
    ``[8^{2 ell}, 8^{2 ell + 2}]``.  Any field may be overridden with a smaller grid.
    """

    k_grid: list[int] | None = None
    base: int = 8
    shell_width: int | None = None
    r_step: int | None = None
    ell_grid: list[int] | None = None
    n_grid: list[int] | None = None
    max_radius: int = 1 << 22

    def resolve(self, k0: int) -> "ScanConfig":
        w = self.shell_width or 8 ** (4 * k0 + 3)
        return ScanConfig(
            k_grid=list(self.k_grid or range(9 * k0, 10 * k0 + 1)),
            base=self.base,
            shell_width=w,
            r_step=self.r_step or w,
            ell_grid=list(self.ell_grid or range(k0, 2 * k0 + 1)),
            n_grid=list(self.n_grid) if self.n_grid else None,
            max_radius=self.max_radius,
        )

    def n_values(self, ell: int) -> list[int]:
        return list(self.n_grid) if self.n_grid else list(range(8 ** (2 * ell), 8 ** (2 * ell + 2) + 1))

    def radii(self, k: int) -> list[int]:
        lo, hi = self.base ** k, self.base ** (k + 1)
        return list(range(lo + self.r_step, hi - self.r_step + 1, self.r_step)) or [lo]


@dataclass
class ScanResult:
    k: int
    r: int
    ell: int
    n: int
    theta: float
    psi: float
    doubling: dict[int, float]
    shell: dict[tuple[int, int], float]
    thetas: dict[tuple[int, int], float]
    entropy_increments: dict[int, float]
    config: ScanConfig = field(repr=False, default_factory=ScanConfig)

    def rows(self) -> list[dict]:
        out = [{"term": "doubling", "k": k, "value": v} for k, v in self.doubling.items()]
        out += [{"term": "shell", "k": k, "r": r, "value": v} for (k, r), v in self.shell.items()]
        out += [{"term": "theta", "r": r, "ell": l, "value": v} for (r, l), v in self.thetas.items()]
        out += [{"term": "entropy", "n": n, "value": v} for n, v in self.entropy_increments.items()]
        return out


def _ball_measures(g: Graph, rho: int, radii: Sequence[int]) -> dict[int, int]:
    dist = bfs_distances(g, rho)
    if np.any(dist < 0):
        raise GraphError("scan needs a connected graph")
    deg = g.degrees
    cum = np.cumsum(np.bincount(dist, weights=deg))
    return {int(r): int(cum[min(max(int(r), 0), cum.size - 1)]) if r >= 0 else 0 for r in radii}


def _argmin_checked(values: dict, name: str):
    key = min(values, key=lambda q: (values[q], q))
    mean = float(np.mean(list(values.values())))
    if values[key] > mean + 1e-12:
        raise AssertionError(f"{name}: minimum exceeds grid average")
    return key


def scan_good_scales(g: Graph, rho: int, k0: int, config: ScanConfig | None = None) -> ScanResult:
    """Evaluate every summand of the scale functional and select ``(k, r, ell, n)``.

    The doubling term picks ``k``, the shell term picks ``r`` in ``I(k)``, theta picks
    ``ell`` and the entropy increment ``H(2n) - H(2n-1)`` picks ``n``.  Each choice
    is checked to be no larger than the average over its grid.
    """
    cfg = (config or ScanConfig()).resolve(k0)
    kmax_r = max(cfg.base ** (k + 2) for k in cfg.k_grid)
    if kmax_r > cfg.max_radius:
        raise GraphError(f"radius {kmax_r} exceeds max_radius {cfg.max_radius}; override the scan grid")
    radii_needed = set()
    for k in cfg.k_grid:
        radii_needed |= {cfg.base ** k, cfg.base ** (k + 2)}
        for r in cfg.radii(k):
            radii_needed |= {r, r - cfg.shell_width}
    mu = _ball_measures(g, rho, sorted(radii_needed))
    doubling = {k: math.log(mu[cfg.base ** (k + 2)] / mu[cfg.base ** k]) for k in cfg.k_grid}
    shell = {}
    for k in cfg.k_grid:
        for r in cfg.radii(k):
            inner = mu[r - cfg.shell_width]
            shell[(k, r)] = math.log(mu[r] / inner) if inner > 0 else math.inf

    k_best = _argmin_checked(doubling, "doubling")
    r_best = _argmin_checked({r: shell[(k_best, r)] for r in cfg.radii(k_best)}, "shell")

    j_max = 3 * max(cfg.ell_grid)
    all_r = sorted({r for (_, r) in shell})
    big = _ball_subset(g, rho, max(all_r))
    table = GrowthTable(g, big.members, j_max)
    thetas = {}
    for r in all_r:
        S = _ball_subset(g, rho, r)
        bars = phi_bar(g, S, range(1, j_max + 1), table)
        for ell in cfg.ell_grid:
            thetas[(r, ell)] = theta_profile(bars, ell)
    ell_best = _argmin_checked({l: thetas[(r_best, l)] for l in cfg.ell_grid}, "theta")

    n_all = sorted({n for l in cfg.ell_grid for n in cfg.n_values(l)})
    H = entropy_profile(g, rho, 2 * max(n_all))
    incr = {n: float(H[2 * n] - H[2 * n - 1]) for n in n_all}
    n_best = _argmin_checked({n: incr[n] for n in cfg.n_values(ell_best)}, "entropy")

    psi = 0.0
    for k in cfg.k_grid:
        I = cfg.radii(k)
        psi += doubling[k]
        for r in I:
            ent = sum(sum(incr[n] for n in cfg.n_values(l)) for l in cfg.ell_grid)
            psi += shell[(k, r)] + (sum(thetas[(r, l)] for l in cfg.ell_grid) + ent) / (k0 * len(I))
    return ScanResult(k_best, r_best, ell_best, n_best, thetas[(r_best, ell_best)], psi,
                      doubling, shell, thetas, incr, cfg)


# -------------------------------------------------------- mass transport

@dataclass(frozen=True)
class MassTransport:
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.lhs > self.rhs + 1e-12))


def mass_transport_check(g: Graph, R: int, predicates) -> MassTransport:
    """Both sides of the ball-averaging inequality with a degree-biased root.

    ``predicates`` is a callable on vertices, a boolean vector, or a
    ``(count, n)`` boolean array.  Returns per-predicate sides
    ``E[mu(B(R))/mu(B(2R)) 1_A(rho)]`` and ``E[mu(A in B_rho(R)) / mu(B_rho(R))]``.
    """
    if callable(predicates):
        A = np.array([[bool(predicates(v)) for v in range(g.n)]])
    else:
        A = np.atleast_2d(np.asarray(predicates, dtype=bool))
    if A.shape[1] != g.n:
        raise ValueError("predicate must cover every vertex")
    deg = g.degrees.astype(float)
    p = deg / deg.sum()
    within = ball_size_table(g, np.arange(g.n), [R, 2 * R], weights=deg)
    ratio = within[:, 0] / within[:, 1]
    lhs = A.astype(float) @ (p * ratio)
    # M[rho, x] = 1{d(rho, x) <= R}
    d = csgraph.dijkstra(g.adjacency, directed=False, unweighted=True, limit=R + 0.5)
    M = np.isfinite(d).astype(float)
    rhs = ((A.astype(float) * deg[None, :]) @ M.T / within[None, :, 0]) @ p
    return MassTransport(lhs, rhs)


# ------------------------------------------------- graphic Markov type

@dataclass(frozen=True)
class MarkovTypeFit:
    M: float
    argmax: tuple[int, int]
    table: list[dict]


def graphic_markov_type_probe(g: Graph, subsets: Sequence[VertexSubset],
                              t_grid: Sequence[int] | Callable[[VertexSubset], Sequence[int]],
                              p: int = 2, mode: str = "exact", n_samples: int = 10_000,
                              seed: int = 0) -> MarkovTypeFit:
    """``max_{S,t} (E[d(Z_0, Z_t)^p] / t)^{1/p}`` over stationary restricted walks."""
    if p != 2:
        raise ValueError("only p = 2 is supported")
    best, arg, table = 0.0, (-1, -1), []
    for i, S in enumerate(subsets):
        ts = list(t_grid(S) if callable(t_grid) else t_grid)
        if len(S) <= 1:
            for t in ts:
                table.append({"subset": i, "t": t, "msd": 0.0, "ratio": 0.0})
            continue
        w = RestrictedWalk(g, S)
        for est in mean_square_displacement(w, "stationary", ts, mode=mode, count=n_samples, master_seed=seed):
            ratio = est.value / est.t if est.t > 0 else 0.0
            table.append({"subset": i, "t": est.t, "msd": est.value, "ratio": ratio})
            if ratio > best:
                best, arg = ratio, (i, est.t)
    return MarkovTypeFit(math.sqrt(best), arg, table)
