"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 bad arguments or config,
3 an experiment ran but its checks did not pass.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .embed import GraphMetric, co_lipschitz_report, lipschitz_constant, threshold_map
from .experiments import (RUNNERS, ConfigError, ExperimentConfig, build_graph, parse_t_grid,
                          run_with_manifest, write_json)
from .graph import GraphError, all_pairs_distances, write_graph
from .scales import ScanConfig, scan_good_scales
from .walk import mean_square_displacement

log = logging.getLogger("walklab")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker count (results do not depend on it)")
    p.add_argument("--name", help="output file stem")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="walklab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"walklab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a graph file")
    _common(g)
    g.add_argument("--kind", choices=["path", "cycle", "grid", "torus", "expander", "stretched", "hk"])
    g.add_argument("--dims", type=int, nargs="+")
    g.add_argument("--n", type=int, help="expander size")
    g.add_argument("--L", type=int, help="subdivision length (default n)")
    g.add_argument("--n-sequence", type=int, nargs="+")
    g.add_argument("--threshold", type=float, default=0.95)

    w = sub.add_parser("walk", help="mean-square displacement over a time grid")
    _common(w)
    w.add_argument("--graph", help="graph file")
    w.add_argument("--t-grid", help='"1,4,16", "a..b" (all integers) or "a..b:x2" (geometric)')
    w.add_argument("--mode", choices=["exact", "monte_carlo"])
    w.add_argument("--start", help='vertex id or "stationary"')
    w.add_argument("--samples", type=int)

    e = sub.add_parser("embed", help="sample a threshold embedding")
    _common(e)
    e.add_argument("--graph")
    e.add_argument("--k", type=int, help="scale index; tau = 8^k")
    e.add_argument("--tau", type=float)
    e.add_argument("--m", type=int)

    s = sub.add_parser("scan", help="scan scales for a good (k, r, ell, n)")
    _common(s)
    s.add_argument("--graph")
    s.add_argument("--root", type=int)
    s.add_argument("--k0", type=int)
    s.add_argument("--k-grid", type=int, nargs="+")
    s.add_argument("--base", type=int)
    s.add_argument("--shell-width", type=int)
    s.add_argument("--r-step", type=int)
    s.add_argument("--ell-grid", type=int, nargs="+")
    s.add_argument("--n-grid", type=int, nargs="+")

    for name, text in (("exceptional", "superdiffusive window on stretched expanders"),
                       ("planar", "Folner-box pipeline on a grid"),
                       ("diffusive", "tempered/insulated triples against the speed bound")):
        x = sub.add_parser(name, help=text)
        _common(x)
        x.add_argument("--samples", type=int)
        x.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                       help="override a params entry, e.g. --set n_values=[64,128]")

    r = sub.add_parser("report", help="summarize manifests in an output directory")
    r.add_argument("--out", required=True)
    return ap


def _config(args, name: str) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig(name=name)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "name", None):
        cfg.name = args.name
    return cfg


def _graph_spec(args, cfg: ExperimentConfig) -> dict:
    if getattr(args, "graph", None):
        cfg.graph = {"file": args.graph}
    if not cfg.graph:
        raise ConfigError("a graph is required (--graph or config.graph)")
    return cfg.graph


def _cmd_gen(args) -> int:
    cfg = _config(args, "graph")
    if args.kind:
        spec = {"kind": args.kind}
        if args.dims:
            spec["dims"] = args.dims
        if args.n is not None:
            spec["n"] = args.n
        if args.L is not None:
            spec["L"] = args.L
        if args.n_sequence:
            spec["n_sequence"] = args.n_sequence
        spec["threshold"] = args.threshold
        cfg.graph = spec
    cfg.validate()

    def body(c):
        rg = build_graph(c.graph, c.seed)
        meta = {**rg.metadata, "seed": c.seed, "spec": c.graph}
        path = write_graph(Path(c.out) / f"{c.name}.graph", rg, meta)
        summary = {"graph_file": str(path), "vertices": rg.n, "edges": rg.graph.num_edges,
                   "max_degree": rg.graph.max_degree}
        return summary, []
    run_with_manifest(cfg, body, args.threads)
    return 0


def _cmd_walk(args) -> int:
    cfg = _config(args, "walk")
    _graph_spec(args, cfg)
    for key, val in (("t_grid", args.t_grid), ("mode", args.mode), ("start", args.start), ("samples", args.samples)):
        if val is not None:
            cfg.walk[key] = val
    cfg.validate()

    def body(c):
        rg = build_graph(c.graph, c.seed)
        times = parse_t_grid(c.walk.get("t_grid", "0..16"))
        mode = c.walk.get("mode", "exact")
        start = c.walk.get("start", "stationary")
        start = start if start == "stationary" else int(start)
        count = int(c.walk.get("samples", 10_000))
        ests = mean_square_displacement(rg.graph, start, times, mode=mode, count=count, master_seed=c.seed)
        rows = [{"t": e.t, "statistic": "msd", "value": e.value, "stderr": e.stderr, "n_samples": e.n_samples,
                 "seed": c.seed} for e in ests]
        return {"mode": mode, "start": start, "points": len(rows)}, rows
    run_with_manifest(cfg, body, args.threads)
    return 0


def _cmd_embed(args) -> int:
    cfg = _config(args, "embed")
    _graph_spec(args, cfg)
    for key, val in (("k", args.k), ("tau", args.tau), ("m", args.m)):
        if val is not None:
            cfg.embedding[key] = val
    cfg.validate()

    def body(c):
        rg = build_graph(c.graph, c.seed)
        k = c.embedding.get("k")
        tau = float(c.embedding.get("tau", 8.0 ** k if k is not None else 8.0))
        m = int(c.embedding.get("m", 256))
        metric = GraphMetric(rg.graph)
        ens = threshold_map(metric, tau, m, c.seed)
        ens.save(Path(c.out) / f"{c.name}.ensemble")
        lip = lipschitz_constant(metric, ens.coords)
        rows = [{"t": "", "statistic": "lipschitz_max", "value": lip, "stderr": 0.0, "n_samples": m, "seed": c.seed}]
        summary = {"tau": tau, "m": m, "lipschitz_max": lip}
        if k is not None and k >= 1 and rg.n <= 8000:
            rep = co_lipschitz_report(ens, rg.graph, int(k), dist=all_pairs_distances(rg.graph))
            summary["co_lipschitz"] = dataclasses.asdict(rep)
            rows.append({"t": "", "statistic": "co_lipschitz_violation_rate", "value": rep.rate, "stderr": 0.0,
                         "n_samples": rep.pairs, "seed": c.seed})
        return summary, rows
    run_with_manifest(cfg, body, args.threads)
    return 0


def _cmd_scan(args) -> int:
    cfg = _config(args, "scan")
    _graph_spec(args, cfg)
    over = {"k_grid": args.k_grid, "base": args.base, "shell_width": args.shell_width, "r_step": args.r_step,
            "ell_grid": args.ell_grid, "n_grid": args.n_grid}
    cfg.params.update({k: v for k, v in over.items() if v is not None})
    if args.root is not None:
        cfg.params["root"] = args.root
    if args.k0 is not None:
        cfg.params["k0"] = args.k0
    cfg.validate()

    def body(c):
        rg = build_graph(c.graph, c.seed)
        p = dict(c.params)
        rho = int(p.pop("root", rg.root))
        k0 = int(p.pop("k0", 1))
        res = scan_good_scales(rg.graph, rho, k0, ScanConfig(**p))
        rows = [{"t": row.get("n", ""), "statistic": f"{row['term']}_" + "_".join(
            f"{key}{row[key]}" for key in ("k", "r", "ell") if key in row), "value": row["value"],
            "stderr": 0.0, "n_samples": 0, "seed": c.seed} for row in res.rows()]
        summary = {"k": res.k, "r": res.r, "ell": res.ell, "n": res.n, "theta": res.theta, "psi": res.psi,
                   "config": dataclasses.asdict(res.config)}
        return summary, rows
    run_with_manifest(cfg, body, args.threads)
    return 0


def _cmd_experiment(args) -> int:
    cfg = _config(args, args.command)
    if args.samples is not None:
        cfg.walk["samples"] = args.samples
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=JSON, got {item!r}")
        try:
            cfg.params[key] = json.loads(val)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--set {key}: {exc}") from exc
    cfg.validate()
    summary = run_with_manifest(cfg, RUNNERS[args.command], args.threads)
    print(json.dumps({k: v for k, v in summary.items() if not isinstance(v, (list, dict))}, indent=1, default=str))
    return 0 if summary.get("passed", True) else 3


def _cmd_report(args) -> int:
    out = Path(args.out)
    manifests = sorted(out.glob("*.manifest.json"))
    if not manifests:
        print(f"no manifests in {out}", file=sys.stderr)
        return 1
    rows = []
    for m in manifests:
        data = json.loads(m.read_text())
        rows.append({"experiment": data.get("experiment"), "status": data.get("status"),
                     "passed": data.get("passed"), "wall_time_s": data.get("wall_time_s"),
                     "config_sha256": data.get("config_sha256", "")[:12]})
    width = max(len(str(r["experiment"])) for r in rows)
    for r in rows:
        print(f"{str(r['experiment']):<{width}}  {r['status']:<6}  passed={r['passed']}  "
              f"{r['wall_time_s']}s  {r['config_sha256']}")
    write_json(out / "report.json", rows)
    return 0


COMMANDS = {"gen": _cmd_gen, "walk": _cmd_walk, "embed": _cmd_embed, "scan": _cmd_scan,
            "exceptional": _cmd_experiment, "planar": _cmd_experiment, "diffusive": _cmd_experiment,
            "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GraphError, ValueError, OSError) as exc:
        print(f"walklab: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # reported with a manifest already written
        print(f"walklab: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
