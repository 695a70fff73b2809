"""Config-driven experiments with CSV outputs and JSON manifests.

Every experiment is a pure function of its :class:`ExperimentConfig`.  Results go
to ``<out>/<name>.csv`` (rows ``t, statistic, value, stderr, n_samples, seed``) and
``<out>/<name>.summary.json``; ``<out>/<name>.manifest.json`` is written even when
a run fails.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__
from . import rng as rngmod
from .graph import Graph, RootedGraph, VertexSubset, bfs_distances, edge_expansion, read_rooted
from .generators import (ExpanderSpec, HkParams, build_hk, lattice_distance, random_regular_expander,
                         standard_graph, subdivide)
from .scales import (ScaleConstants, growth_summary, graphic_markov_type_probe, many_scales_bound,
                     temper_insulate_check)
from .rng import UniformStreams
from .walk import (RestrictedWalk, mean_square_displacement, msd_from_starts,
                   weighted_stationary_msd)

CSV_FIELDS = ("t", "statistic", "value", "stderr", "n_samples", "seed")
EXPERIMENTS = ("exceptional", "planar", "diffusive")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    name: str
    graph: dict[str, Any] = field(default_factory=dict)
    walk: dict[str, Any] = field(default_factory=dict)
    embedding: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    out: str = "results"
    caps: dict[str, Any] = field(default_factory=dict)
    params: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("name must be a non-empty string")
        for key in ("graph", "walk", "embedding", "caps", "params"):
            if not isinstance(getattr(self, key), dict):
                raise ConfigError(f"{key} must be a mapping")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for key in ("samples", "count"):
            v = self.walk.get(key)
            if v is not None and (not isinstance(v, int) or v < 2):
                raise ConfigError(f"walk.{key} must be an integer >= 2")
        if "t_grid" in self.walk:
            parse_t_grid(self.walk["t_grid"])
        if self.graph:
            _check_graph_spec(self.graph)
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "name" not in data:
            raise ConfigError("config needs a name")
        return cls(**data).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def parse_t_grid(spec) -> list[int]:
    """Time grids: a list, ``"1,4,16"``, ``"a..b"`` (every integer) or ``"a..b:xq"`` (geometric)."""
    if isinstance(spec, (list, tuple)):
        out = [int(t) for t in spec]
    elif isinstance(spec, int):
        out = [spec]
    elif isinstance(spec, str):
        spec = spec.strip()
        if ".." in spec:
            rng_part, _, step = spec.partition(":")
            a, b = (int(v) for v in rng_part.split(".."))
            if step:
                if not step.startswith("x"):
                    raise ConfigError(f"bad t-grid step {step!r}")
                q = int(step[1:])
                if q < 2 or a < 1:
                    raise ConfigError("geometric t-grid needs ratio >= 2 and start >= 1")
                out, t = [], a
                while t <= b:
                    out.append(t)
                    t *= q
            else:
                out = list(range(a, b + 1))
        else:
            out = [int(v) for v in spec.split(",") if v]
    else:
        raise ConfigError(f"cannot parse t-grid {spec!r}")
    if not out or any(t < 0 for t in out):
        raise ConfigError("t-grid must be a non-empty list of non-negative integers")
    return out


def _check_graph_spec(spec: dict) -> None:
    kind = spec.get("kind")
    if "file" in spec:
        return
    if kind in ("path", "cycle", "grid", "torus"):
        if not spec.get("dims"):
            raise ConfigError(f"{kind} needs dims")
    elif kind in ("expander", "stretched"):
        n = spec.get("n")
        if not isinstance(n, int) or n <= 0 or n % 2:
            raise ConfigError("expander n must be a positive even integer")
    elif kind == "hk":
        HkParams(tuple(spec.get("n_sequence", ())))
    else:
        raise ConfigError(f"unknown graph kind {kind!r}")


def build_graph(spec: dict, seed: int = 0) -> RootedGraph:
    """Construct the graph named by a config's ``graph`` mapping."""
    _check_graph_spec(spec)
    if "file" in spec:
        return read_rooted(spec["file"])
    kind = spec["kind"]
    if kind in ("path", "cycle", "grid", "torus"):
        g = standard_graph(kind, *spec["dims"])
        return RootedGraph(g, int(spec.get("root", 0)), metadata={"generator": kind, "dims": list(spec["dims"])})
    template = ExpanderSpec(n=4, degree=int(spec.get("degree", 3)),
                            spectral_gap_threshold=float(spec.get("threshold", 0.95)),
                            max_resample_attempts=int(spec.get("attempts", 2000)),
                            seed=int(spec.get("seed", seed)))
    if kind in ("expander", "stretched"):
        es = dataclasses.replace(template, n=int(spec["n"]), seed=rngmod.derive_seed(template.seed, spec["n"]))
        g = random_regular_expander(es)
        meta = {"generator": kind, "expander": dataclasses.asdict(es)}
        if kind == "stretched":
            L = int(spec.get("L", spec["n"]))
            g = subdivide(g, L)
            meta["L"] = L
        return RootedGraph(g, 0, metadata=meta)
    return build_hk(HkParams(tuple(spec["n_sequence"]), bool(spec.get("enforce_paper_growth", False)),
                             int(spec.get("min_tail_length", 1))), template,
                    int(spec.get("vertex_budget", 5_000_000)))


# ---------------------------------------------------------------- output

def versions() -> dict[str, str]:
    return {"walklab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_FIELDS)
        for r in rows:
            wr.writerow([_fmt(r.get(k, "")) for k in CSV_FIELDS])
    return path


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_ready(obj), indent=1, sort_keys=True))
    return path


def run_with_manifest(config: ExperimentConfig, body: Callable[[ExperimentConfig], tuple[dict, list[dict]]],
                      threads: int = 1) -> dict:
    """Run ``body`` and write CSV, summary and manifest under ``config.out``.

    The manifest records status ``ok`` or ``error`` plus the error text, so a
    failed run is never left without one.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    manifest = {"experiment": config.name, "config": json.loads(config.to_json()),
                "config_sha256": config.digest(), "seed": config.seed, "versions": versions(),
                "threads": threads, "outputs": []}
    try:
        summary, rows = body(config)
        manifest["outputs"].append(str(write_csv(out / f"{config.name}.csv", rows).name))
        manifest["outputs"].append(str(write_json(out / f"{config.name}.summary.json", summary).name))
        manifest["status"] = "ok"
        manifest["passed"] = bool(summary.get("passed", True))
        return summary
    except Exception as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["wall_time_s"] = round(time.perf_counter() - start, 3)
        write_json(out / f"{config.name}.manifest.json", manifest)


# ---------------------------------------------------- exceptional times

def default_slow_function(t: float) -> float:
    """``ln ln (t + e^e)``: unbounded, increasing, equal to 1 at ``t = 0``."""
    return math.log(math.log(t + math.e ** math.e))


def torus_control_msd(side: int, t: int, count: int, seed: int) -> tuple[float, float]:
    """Stationary-start MSD of the simple walk on the ``side x side`` torus at time ``t``.

    Positions are tracked as coordinates, so no adjacency structure is stored;
    the walk uses the same per-trajectory uniform streams as graph walks.
    """
    moves = np.array([[-1, 0], [0, -1], [0, 1], [1, 0]])
    dist = lattice_distance("torus", side, side)
    vals = np.empty(count)
    for lo in range(0, count, 4096):
        idx = np.arange(lo, min(count, lo + 4096))
        streams = UniformStreams(seed, idx, salt=0x70C, block=min(1024, max(t, 1)))
        start = np.minimum((streams.next() * side * side).astype(np.int64), side * side - 1)
        i, j = start // side, start % side
        for _ in range(t):
            mv = moves[np.minimum((streams.next() * 4).astype(np.int64), 3)]
            i = (i + mv[:, 0]) % side
            j = (j + mv[:, 1]) % side
        vals[idx] = dist(start, i * side + j).astype(float) ** 2
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(count))


def _increasing_3sigma(vals: list[float], ses: list[float]) -> bool:
    return all(b - a > 3 * math.hypot(sa, sb) for a, b, sa, sb in zip(vals, vals[1:], ses, ses[1:]))


def run_exceptional(config: ExperimentConfig) -> tuple[dict, list[dict]]:
    """Superdiffusive window on stretched expanders ``G_n[n]`` at ``t_n = ceil(n^2 ln n)``.

    Reports ``r(n) = MSD(t_n) / t_n`` from stationary starts, checks that ``r``
    increases at 3 sigma with ``r(max)/r(min) >= factor``, and runs a torus
    control at the same times whose ratios should stay flat.
    """
    p = config.params
    ns = [int(n) for n in p.get("n_values", [64, 128, 256])]
    count = int(config.walk.get("samples", 4000))
    factor = float(p.get("factor", 1.5))
    control = bool(p.get("control", True))
    rows, per_n = [], []
    for n in ns:
        rg = build_graph({"kind": "stretched", "n": n, "seed": config.seed,
                          "threshold": p.get("threshold", 0.95)}, config.seed)
        t = math.ceil(n * n * math.log(n))
        est = mean_square_displacement(rg.graph, "stationary", t, mode="monte_carlo", count=count,
                                       master_seed=rngmod.derive_seed(config.seed, n))
        r, se = est.value / t, est.stderr / t
        rec = {"n": n, "vertices": rg.n, "t": t, "msd": est.value, "msd_stderr": est.stderr, "ratio": r,
               "ratio_stderr": se, "significant": 3 * est.stderr < 0.1 * est.value,
               "threshold_t_log_t_over_f": t * math.log(t) / default_slow_function(t)}
        if control:
            side = 2 * t + 3
            cm, cs = torus_control_msd(side, t, count, rngmod.derive_seed(config.seed, n, 1))
            rec.update({"control_side": side, "control_msd": cm, "control_ratio": cm / t,
                        "control_ratio_stderr": cs / t})
            rows.append({"t": t, "statistic": f"control_msd_n{n}", "value": cm, "stderr": cs,
                         "n_samples": count, "seed": config.seed})
        rows.append({"t": t, "statistic": f"msd_stretched_n{n}", "value": est.value, "stderr": est.stderr,
                     "n_samples": count, "seed": config.seed})
        per_n.append(rec)
    ratios = [q["ratio"] for q in per_n]
    ses = [q["ratio_stderr"] for q in per_n]
    summary = {
        "experiment": "exceptional",
        "per_n": per_n,
        "increasing_3sigma": _increasing_3sigma(ratios, ses),
        "ratio_max_over_min": ratios[-1] / ratios[0],
        "factor": factor,
        "significant": all(q["significant"] for q in per_n),
    }
    summary["factor_met"] = summary["ratio_max_over_min"] >= factor
    if control:
        cr = [q["control_ratio"] for q in per_n]
        cse = [q["control_ratio_stderr"] for q in per_n]
        summary["control_flat"] = abs(cr[-1] - cr[0]) <= 3 * math.hypot(cse[0], cse[-1]) and \
            all(abs(a - b) <= 3 * math.hypot(sa, sb) for a, b, sa, sb in zip(cr, cr[1:], cse, cse[1:]))
    summary["passed"] = bool(summary["increasing_3sigma"] and summary["factor_met"] and summary["significant"]
                             and summary.get("control_flat", True))
    return summary, rows


# -------------------------------------------------------- planar / amenable

def corner_box(side: int, k: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    return (i * side + j).ravel()


def centered_box(side: int, k: int) -> np.ndarray:
    off = (side - k) // 2
    i, j = np.meshgrid(np.arange(off, off + k), np.arange(off, off + k), indexing="ij")
    return (i * side + j).ravel()


def corner_box_expansion(side: int, k: int) -> float:
    """Closed-form edge expansion of the ``k x k`` corner box of the ``side x side`` grid."""
    if k >= side:
        return 0.0
    return 2 * k / (4 * k * k - 2 * k)


def run_planar_dichotomy(config: ExperimentConfig) -> tuple[dict, list[dict]]:
    """Folner-box pipeline on a square grid.

    ``M`` is fitted by the Markov type probe on centered boxes; for each ``t`` the
    smallest corner box with expansion ``<= (M/t)^2`` is selected and the best
    sampled start must satisfy ``MSD <= 2 M^2 t (1 + slack)``.
    """
    p = config.params
    side = int(p.get("side", 128))
    t_values = [int(t) for t in p.get("t_values", [16, 64, 256])]
    probe_sides = [int(k) for k in p.get("probe_sides", [8, 16, 32])]
    n_starts = int(p.get("starts", 32))
    slack = float(p.get("slack", 0.2))
    g = standard_graph("grid", side, side)
    boxes = [VertexSubset.from_vertices(g, centered_box(side, k)) for k in probe_sides]
    grid_for = lambda S: sorted({2 ** j for j in range(0, int(math.log2(len(S))) + 1)} |
                                {t for t in t_values if t <= len(S)})
    fit = graphic_markov_type_probe(g, boxes, grid_for)
    M = fit.M
    rows = [{"t": row["t"], "statistic": f"probe_ratio_box{probe_sides[row['subset']]}", "value": row["ratio"],
             "stderr": 0.0, "n_samples": 0, "seed": config.seed} for row in fit.table]
    per_t = []
    for t in t_values:
        target = (M / t) ** 2
        chosen = None
        for k in range(2, side + 1):
            if corner_box_expansion(side, k) <= target:
                chosen = k
                break
        if chosen is None:
            per_t.append({"t": t, "feasible": False, "limiting_box": side})
            continue
        S = VertexSubset.from_vertices(g, corner_box(side, chosen))
        phi = edge_expansion(g, S)
        gen = rngmod.generator(config.seed, 0x9A, t)
        pi = RestrictedWalk(g, S).stationary_weights
        starts = np.unique(S.members[np.minimum(np.searchsorted(np.cumsum(pi), gen.random(n_starts), side="right"),
                                                len(S) - 1)])
        msd = msd_from_starts(g, starts, t)
        best = float(msd.min())
        bound = 2 * M * M * t
        rec = {"t": t, "feasible": True, "box_side": chosen, "expansion": phi,
               "expansion_closed_form": corner_box_expansion(side, chosen), "target": target,
               "starts": int(starts.size), "min_msd": best, "mean_msd": float(msd.mean()), "bound": bound,
               "holds": best <= bound * (1 + slack)}
        per_t.append(rec)
        rows.append({"t": t, "statistic": "min_start_msd", "value": best, "stderr": 0.0,
                     "n_samples": int(starts.size), "seed": config.seed})
    summary = {"experiment": "planar", "side": side, "M": M, "M_argmax": list(fit.argmax), "slack": slack,
               "per_t": per_t, "passed": all(r.get("holds", False) for r in per_t)}
    return summary, rows


# ------------------------------------------------ diffusive versus bound

def run_diffusive_vs_bound(config: ExperimentConfig) -> tuple[dict, list[dict]]:
    """For each ``(n, lam, r)`` in the grid: gate on tempered and insulated, then
    compare the restricted-walk displacement on good starts with the multi-scale
    bound and record the share of starts whose unrestricted MSD at ``2n`` exceeds
    ``budget_factor * lam^budget_power * n``."""
    p = config.params
    rg = build_graph(config.graph or {"kind": "torus", "dims": [32, 32]}, config.seed)
    g = rg.graph
    rho = int(p.get("root", rg.root))
    ns = [int(n) for n in p.get("n_values", [8])]
    lams = [float(v) for v in p.get("lambda_values", [1, 2, 4, 8, 16])]
    rs = [int(r) for r in p.get("r_values", [int(bfs_distances(g, rho).max()) + 2 * max(ns) + 1])]
    factor = float(p.get("budget_factor", 1.0))
    power = float(p.get("budget_power", 13.0))
    cap = int(config.caps.get("dense", 5000))
    triples, rows = [], []
    start_msd: dict[tuple[int, int], np.ndarray] = {}
    for n in ns:
        sc = ScaleConstants.of(n)
        for r in rs:
            ball = VertexSubset.from_mask(g, bfs_distances(g, rho, radius=r) >= 0)
            for lam in lams:
                rep = temper_insulate_check(g, rho, n, lam, r)
                rec = {"n": n, "lambda": lam, "r": r, "tempered": rep.tempered, "insulated": rep.insulated,
                       "shell_ratio": rep.shell_ratio, "reason": rep.reason}
                if rep.tempered and rep.insulated:
                    summ = growth_summary(g, ball, list(sc.ks), lam, sc.alpha)
                    w = RestrictedWalk(g, ball)
                    measured = weighted_stationary_msd(w, [2 * n], summ.s_up.astype(float), cap)[0]
                    budget = many_scales_bound(n, lam, rep.bar_phi)
                    key = (n, r)
                    if key not in start_msd:
                        start_msd[key] = msd_from_starts(g, ball.members, 2 * n)
                    thresh = factor * lam ** power * n
                    exceed = float(w.stationary_weights[start_msd[key] >= thresh].sum())
                    rec.update({"good_start_msd": measured, "bound": budget, "within_bound": measured <= budget,
                                "s_up_mass": summ.s_up_mass, "exceed_threshold": thresh,
                                "exceedance": exceed, "exceedance_times_lambda": exceed * lam})
                    rows.append({"t": 2 * n, "statistic": f"exceedance_lambda{lam:g}_r{r}", "value": exceed,
                                 "stderr": 0.0, "n_samples": len(ball), "seed": config.seed})
                    rows.append({"t": 2 * n, "statistic": f"good_start_msd_lambda{lam:g}_r{r}",
                                 "value": measured, "stderr": 0.0, "n_samples": len(ball), "seed": config.seed})
                triples.append(rec)
    gated = [t for t in triples if t["tempered"] and t["insulated"]]
    monotone = True
    for n in ns:
        for r in rs:
            seq = [t["exceedance"] for t in gated if t["n"] == n and t["r"] == r]
            monotone &= all(b <= a + 1e-15 for a, b in zip(seq, seq[1:]))
    summary = {"experiment": "diffusive", "vertices": g.n, "root": rho, "triples": triples,
               "gated": len(gated), "excluded": len(triples) - len(gated),
               "all_within_bound": all(t["within_bound"] for t in gated),
               "exceedance_monotone": monotone}
    summary["passed"] = bool(gated) and summary["all_within_bound"] and monotone
    return summary, rows


RUNNERS = {"exceptional": run_exceptional, "planar": run_planar_dichotomy, "diffusive": run_diffusive_vs_bound}
