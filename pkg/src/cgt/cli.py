"""Command line entry point: ``cgt {run,graph,probe,rate,compare}``.

Exit codes: 0 success (a recorded divergence still counts as a completed
run), 2 configuration or graph-input error, 3 file or data error, 4 numerical
failure such as a non-converging eigenvector iteration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfgmod
from .algo import AlgoConfig, RunResult, run
from .errors import (CGTError, ConfigError, ConnectivityError, ParseError, TooManyAgents,
                     WeightError)
from .graph import GraphSpec, MixingPair, support_matrix, validate_mixing
from .metrics import CSV_COLUMNS, CsvRecorder, TrajectoryRecord, fmt, record_row
from .objective import (combine_global_smoothness, global_value_grad, probe_dissimilarity,
                        probe_smoothness, smoothness_surrogate, stepsize_bound)
from .rng import make_rng

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
GENERATOR = "numpy.random.Generator(PCG64(seed))"
EXCURSION_WINDOW = 200


class Console:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *parts):
        if not self.quiet:
            print(*parts)


# ---------------------------------------------------------------- loading

def load_any(path: str | Path) -> tuple[cfgmod.ExperimentConfig, int | None]:
    """Load a TOML config or a run's ``.meta``; the second item is the recorded seed."""
    path = Path(path)
    if path.suffix == ".meta":
        with open(path, encoding="utf-8") as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(str(path), f"invalid meta file: {exc}") from None
        return cfgmod.from_dict(meta["config"], path.parent), int(meta["seed"])
    return cfgmod.load_config(path), None


def apply_overrides(cfg: cfgmod.ExperimentConfig, args) -> cfgmod.ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, algorithm=replace(cfg.algorithm, workers=args.workers))
    return cfg


# ---------------------------------------------------------------- running

def execute(cfg: cfgmod.ExperimentConfig, seed: int, prefix: Path | None) -> tuple[RunResult,
                                                                                    list[TrajectoryRecord],
                                                                                    MixingPair]:
    """One run with ``seed``; writes ``prefix.csv`` and ``prefix.meta`` when a prefix is given."""
    mix = cfgmod.build_mixing(cfg)
    objs = cfgmod.build_objectives(cfg)
    x0 = cfgmod.initial_point(replace(cfg, seed=seed), objs[0].dim)
    csv_path = None if prefix is None else prefix.with_name(prefix.name + ".csv")
    with CsvRecorder(csv_path, extra=cfg.mean_local_loss) as rec:
        result = run(x0, mix, objs, cfg.algorithm, rec, seed=seed,
                     mean_local_loss=cfg.mean_local_loss)
    if prefix is not None:
        write_meta(prefix.with_name(prefix.name + ".meta"), cfg, seed, mix, result, rec.records)
    return result, rec.records, mix


def meta_dict(cfg, seed, mix: MixingPair, result: RunResult, records) -> dict:
    resolved = cfg.to_dict()
    # worker count changes scheduling only, never results
    resolved["algorithm"].pop("workers", None)
    resolved["seed"] = cfg.seed
    g0 = records[0].grad_norm_avg if records else math.nan
    window = [r.grad_norm_avg for r in records[: EXCURSION_WINDOW + 1]]
    finite = [g for g in window if math.isfinite(g)]
    excursion = (max(finite) / g0) if finite and g0 > 0 else None
    failure = None
    if result.failure is not None:
        failure = {"error": "NonFiniteState", "k": result.failure.k, "what": result.failure.what}
    return {
        "config": resolved,
        "seed": seed,
        "generator": GENERATOR,
        "mixing": {"text": mix.to_text(), "u": mix.u.tolist(), "v": mix.v.tolist(),
                   "rho_R": mix.rho_R, "rho_C": mix.rho_C},
        "stop_reason": result.stop_reason,
        "iterations": result.iterations,
        "failure": failure,
        "grad_excursion_200": excursion,
        "rows": len(records),
    }


def write_meta(path: Path, cfg, seed, mix, result, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(meta_dict(cfg, seed, mix, result, records), indent=2, sort_keys=True,
                      allow_nan=False, default=_no_json)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def _no_json(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def run_prefixes(prefix: Path, repeat: int) -> list[Path]:
    if repeat == 1:
        return [prefix]
    return [prefix.with_name(f"{prefix.name}_r{r}") for r in range(repeat)]


def summary_line(name: str, result: RunResult, records) -> str:
    last = records[-1] if records else None
    tail = "" if last is None else (f" loss_avg={fmt(last.loss_avg)}"
                                    f" grad_norm_avg={fmt(last.grad_norm_avg)}")
    return f"{name}: stop={result.stop_reason} iterations={result.iterations}{tail}"


def cmd_run(args, out: Console) -> int:
    cfg, meta_seed = load_any(args.config)
    cfg = apply_overrides(cfg, args)
    if meta_seed is not None and args.seed is None:
        # a meta file records the derived seed of one repeat; replay just that run
        cfg = replace(cfg, seed=meta_seed, repeat=1)
    prefix = cfgmod.output_prefix(cfg, args.output)
    for r, p in enumerate(run_prefixes(prefix, cfg.repeat)):
        result, records, _ = execute(cfg, cfg.seed + r, p)
        out(summary_line(str(p), result, records))
    return EXIT_OK


# ---------------------------------------------------------------- graph

def _graph_spec(args) -> GraphSpec:
    if args.config:
        cfg, _ = load_any(args.config)
        return cfg.graph
    kind = {"ring": "directed_ring", "random": "random_strongly_connected"}.get(args.kind, args.kind)
    edges = None
    if args.edge:
        edges = tuple((int(s), int(d), float(w)) for s, d, w in args.edge)
    return cfgmod.parse_graph({"kind": kind, "n_agents": args.n_agents, "density": args.density,
                               "seed": args.seed or 0,
                               **({"edges": [list(e) for e in edges]} if edges else {})})


def cmd_graph(args, out: Console) -> int:
    gspec = _graph_spec(args)
    A = support_matrix(gspec)
    R = A / A.sum(axis=1, keepdims=True)
    C = A / A.sum(axis=0, keepdims=True)
    report = validate_mixing(R, C)
    out(str(report))
    if not report.ok:
        print(f"error: mixing pair rejected: {', '.join(report.failures())}", file=sys.stderr)
        return EXIT_CONFIG
    mix = MixingPair.from_matrices(R, C, seed=gspec.seed)
    with np.printoptions(precision=6, suppress=True, linewidth=120):
        out("u =", mix.u)
        out("v =", mix.v)
    out(f"rho_R = {mix.rho_R:.6g}")
    out(f"rho_C = {mix.rho_C:.6g}")
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(mix.to_text(), encoding="ascii")
    return EXIT_OK


# ---------------------------------------------------------------- probe

def _minimizer(objs, start):
    from scipy.optimize import minimize

    res = minimize(lambda t: global_value_grad(objs, t), start, jac=True, method="L-BFGS-B",
                   options={"maxiter": 2000, "gtol": 1e-10})
    return res.x


def probe_anchor(cfg: cfgmod.ExperimentConfig, objs, anchor_opt: str | None) -> np.ndarray:
    dim = objs[0].dim
    if anchor_opt is None and cfg.probe.anchor is not None:
        anchor = np.asarray(cfg.probe.anchor, float)
        if anchor.shape != (dim,):
            raise ConfigError("probe.anchor", f"expected {dim} entries")
        return anchor
    mode = anchor_opt or "origin"
    if mode == "origin":
        return np.zeros(dim)
    if mode == "init":
        mix = cfgmod.build_mixing(cfg)
        return mix.u @ cfgmod.initial_point(cfg, dim) / mix.n_agents
    if mode == "minimizer":
        return _minimizer(objs, np.zeros(dim))
    raise ConfigError("--anchor", f"unknown anchor {mode!r}")


def cmd_probe(args, out: Console) -> int:
    cfg, _ = load_any(args.config)
    cfg = apply_overrides(cfg, args)
    objs = cfgmod.build_objectives(cfg)
    anchor = probe_anchor(cfg, objs, args.anchor)
    pr = cfg.probe
    locals_ = []
    out("agent  kind              L0_hat        L1_hat")
    for i, o in enumerate(objs):
        est = probe_smoothness(o, anchor, pr.radius, pr.n_samples, seed=cfg.seed + i)
        locals_.append((est.L0_hat, est.L1_hat))
        out(f"{i + 1:5d}  {o.kind:16s}  {est.L0_hat:.6e}  {est.L1_hat:.6e}")
    rng = make_rng(cfg.seed)
    dim = objs[0].dim
    points = []
    for j in range(pr.n_points):
        w = rng.standard_normal(dim)
        points.append(anchor + (4.0 * pr.radius * (j + 1) / pr.n_points) * w / np.linalg.norm(w))
    dis = probe_dissimilarity(objs, points)
    out(f"ell_hat = {dis.ell_hat:.6e}")
    out(f"b_hat   = {dis.b_hat:.6e}")
    mean_max_grad = max(float(np.linalg.norm(global_value_grad(objs, p)[1])) for p in points)
    L0, L1 = combine_global_smoothness(locals_, dis.ell_hat, dis.b_hat)
    out(f"global L0 = {L0:.6e}")
    out(f"global L1 = {L1:.6e}")
    mix = cfgmod.build_mixing(cfg)
    L_hat = smoothness_surrogate(L0, L1, mean_max_grad)
    if L_hat > 0:
        out(f"stepsize ceiling (gradient bound {mean_max_grad:.3g}) = "
            f"{stepsize_bound(mix.u, mix.v, L_hat):.6e}")
    return EXIT_OK


# ---------------------------------------------------------------- rate

def loglog_slope(Ks: Sequence[float], values: Sequence[float]) -> float:
    K = np.log(np.asarray(Ks, float))
    v = np.log(np.asarray(values, float))
    return float(np.polyfit(K, v, 1)[0])


def rate_table(cfg: cfgmod.ExperimentConfig, Ks: Sequence[int], prefix: Path | None,
               seed: int) -> list[tuple[int, float, float]]:
    if len(Ks) < 3:
        raise ConfigError("K", f"need at least 3 budgets, got {len(Ks)}")
    if any(b <= a for a, b in zip(Ks, Ks[1:])) or Ks[0] < 1:
        raise ConfigError("K", "budgets must be positive and strictly increasing")
    rows = []
    for K in Ks:
        c0 = AlgoConfig.auto_c0(K)
        sub = cfg.with_budget(K, c0=c0)
        p = None if prefix is None else prefix.with_name(f"{prefix.name}_K{K}")
        _, records, _ = execute(sub, seed, p)
        rows.append((K, c0, records[-1].min_grad_so_far))
    return rows


def cmd_rate(args, out: Console) -> int:
    cfg, _ = load_any(args.config)
    cfg = apply_overrides(cfg, args)
    if cfg.algorithm.algorithm == "gt":
        raise ConfigError("algorithm.name", "the rate experiment needs a clipping algorithm")
    prefix = cfgmod.output_prefix(cfg, args.output)
    rows = rate_table(cfg, args.K, prefix, cfg.seed)
    table = prefix.with_name(prefix.name + "_rate.csv")
    table.parent.mkdir(parents=True, exist_ok=True)
    with open(table, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "c0", "min_grad_so_far"])
        for K, c0, g in rows:
            w.writerow([K, fmt(c0), fmt(g)])
    out("K        c0            min_grad_so_far")
    for K, c0, g in rows:
        out(f"{K:<8d} {c0:.6e}  {g:.6e}")
    finite = [(K, g) for K, _, g in rows if g > 0 and math.isfinite(g)]
    if len(finite) >= 2:
        out(f"log-log slope = {loglog_slope(*zip(*finite)):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- compare

def cmd_compare(args, out: Console) -> int:
    if not args.configs:
        print("error: compare needs at least one config", file=sys.stderr)
        return EXIT_CONFIG
    merged_prefix = cfgmod.resolve_prefix("runs/compare", args.output)
    groups = []
    for path in args.configs:
        cfg, meta_seed = load_any(path)
        cfg = apply_overrides(cfg, args)
        seed = meta_seed if meta_seed is not None and args.seed is None else cfg.seed
        run_prefix = merged_prefix.with_name(f"{merged_prefix.name}_{Path(path).stem}")
        result, records, _ = execute(cfg, seed, run_prefix)
        groups.append((cfg.algorithm.algorithm, Path(path).stem, records))
        out(summary_line(f"{Path(path).stem} ({cfg.algorithm.algorithm})", result, records))
    dest = merged_prefix.with_name(merged_prefix.name + ".csv")
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "run"] + list(CSV_COLUMNS))
        for algo, name, records in groups:
            for rec in records:
                w.writerow([algo, name] + record_row(rec))
    out(f"merged trajectories: {dest}")
    return EXIT_OK


# ---------------------------------------------------------------- main

def _global_flags(default) -> argparse.ArgumentParser:
    # the subcommand copy uses SUPPRESS so flags may appear before or after it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default(None), help="override the config seed")
    common.add_argument("--output", default=default(None), help="output path prefix")
    common.add_argument("-q", "--quiet", action="store_true", default=default(False),
                        help="suppress progress output")
    common.add_argument("--workers", type=int, default=default(None),
                        help="threads for local gradient evaluation (results do not change)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(lambda _: argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="cgt", parents=[_global_flags(lambda v: v)],
                                     description="Clipped gradient tracking experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one config (TOML or .meta)")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("graph", parents=[common], help="build and check a mixing pair")
    p.add_argument("--config", default=None, help="take the [graph] table from a config")
    p.add_argument("--kind", default="random",
                   choices=["ring", "random", "directed_ring", "random_strongly_connected",
                            "explicit"])
    p.add_argument("--n-agents", type=int, default=5)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--edge", nargs=3, action="append", metavar=("SRC", "DST", "W"),
                   help="explicit edge, 1-based; repeat for more")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("probe", parents=[common], help="estimate smoothness constants")
    p.add_argument("config")
    p.add_argument("--anchor", default=None, choices=["origin", "init", "minimizer"])
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("rate", parents=[common], help="min gradient norm versus budget K")
    p.add_argument("config")
    p.add_argument("--K", type=int, nargs="+", default=[100, 400, 1600, 6400])
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("compare", parents=[common], help="run configs into one long CSV")
    p.add_argument("configs", nargs="*")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Console(args.quiet)
    try:
        return args.func(args, out)
    except (OSError, ParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ConnectivityError, WeightError, TooManyAgents, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CGTError, FloatingPointError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
