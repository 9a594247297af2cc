"""Experiment configuration: a TOML file with graph, data, objective, algorithm and init tables.

Every field and its default is listed in ``configs/SCHEMA.md``. A config can
also be rebuilt from the resolved dictionary stored in a run's ``.meta`` file.
"""

from __future__ import annotations

import functools
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import data as data_mod
from .algo import AlgoConfig
from .errors import ConfigError
from .graph import GraphSpec, MixingPair, build_mixing_pair
from .objective import Composite, LocalObjective, LogisticLq, PowerNorm, Quadratic
from .rng import make_rng

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTPUT_DIR_ENV = "CGT_OUTPUT_DIR"
PER_AGENT_KEYS = ("lam", "p", "L", "const")


@dataclass(frozen=True)
class DataSpec:
    path: str | None = None
    synthetic: str | None = None
    synthetic_seed: int = 0
    dim: int | None = None
    partition: str = "contiguous"
    scale: str = "none"


@dataclass(frozen=True)
class ProbeSpec:
    anchor: tuple[float, ...] | None = None  # None: the origin
    radius: float = 1.0
    n_samples: int = 64
    n_points: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    graph: GraphSpec
    objective: dict[str, Any]
    algorithm: AlgoConfig
    data: DataSpec | None = None
    seed: int = 0
    repeat: int = 1
    output: str = "runs/run"
    init_scale: float = 0.0
    x0: tuple[tuple[float, ...], ...] | None = None
    mean_local_loss: bool = False
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    c0_auto: bool = False

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    def with_budget(self, max_iters: int, c0: float | None = None) -> "ExperimentConfig":
        algo = replace(self.algorithm, max_iters=max_iters)
        if c0 is not None:
            algo = replace(algo, c0=c0)
        elif self.c0_auto:
            algo = replace(algo, c0=AlgoConfig.auto_c0(max_iters))
        return replace(self, algorithm=algo)

    def to_dict(self) -> dict[str, Any]:
        """JSON-safe resolved form; ``from_dict`` of this reproduces the config."""
        g = self.graph
        graph = {"kind": g.kind, "n_agents": g.n_agents, "density": g.density, "seed": g.seed}
        if g.edges is not None:
            graph["edges"] = [list(e) for e in g.edges]
        a = self.algorithm
        algo = {"name": a.algorithm, "alpha": a.alpha,
                "c0": "auto" if self.c0_auto else _jsonable(a.c0),
                "max_iters": a.max_iters, "tracking": a.tracking, "workers": a.workers}
        if a.grad_tol is not None:
            algo["grad_tol"] = a.grad_tol
        if a.batch_size is not None:
            algo["batch_size"] = a.batch_size
        out: dict[str, Any] = {
            "seed": self.seed, "repeat": self.repeat, "output": self.output,
            "graph": graph, "objective": self.objective, "algorithm": algo,
            "init": {"scale": self.init_scale},
            "metrics": {"mean_local_loss": self.mean_local_loss},
            "probe": {"radius": self.probe.radius, "n_samples": self.probe.n_samples,
                      "n_points": self.probe.n_points},
        }
        if self.probe.anchor is not None:
            out["probe"]["anchor"] = list(self.probe.anchor)
        if self.x0 is not None:
            out["init"]["x0"] = [list(r) for r in self.x0]
        if self.data is not None:
            d = {k: v for k, v in vars(self.data).items() if v is not None}
            out["data"] = d
        return out


def _jsonable(x: float):
    return "inf" if x == math.inf else x


def _num(value, fld: str, *, positive=False, allow_inf=False, integer=False):
    if isinstance(value, str) and value.lower() in ("inf", "infinity") and allow_inf:
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(fld, f"expected a number, got {value!r}")
    if integer and (not float(value).is_integer()):
        raise ConfigError(fld, f"expected an integer, got {value!r}")
    value = int(value) if integer else float(value)
    if math.isinf(value) and not allow_inf:
        raise ConfigError(fld, "must be finite")
    if positive and not value > 0:
        raise ConfigError(fld, f"must be positive, got {value!r}")
    return value


def _table(d: dict, key: str, fld: str, required=True) -> dict:
    if key not in d:
        if required:
            raise ConfigError(fld, "missing section")
        return {}
    if not isinstance(d[key], dict):
        raise ConfigError(fld, "expected a table")
    return d[key]


def _check_keys(d: dict, allowed: set[str], fld: str):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{fld}.{extra[0]}" if fld else extra[0], "unknown key")


def parse_graph(g: dict) -> GraphSpec:
    _check_keys(g, {"kind", "n_agents", "density", "seed", "edges"}, "graph")
    kind = g.get("kind", "directed_ring")
    if kind not in ("directed_ring", "random_strongly_connected", "explicit"):
        raise ConfigError("graph.kind", f"unknown graph kind {kind!r}")
    if "n_agents" not in g:
        raise ConfigError("graph.n_agents", "required")
    n = _num(g["n_agents"], "graph.n_agents", positive=True, integer=True)
    density = _num(g.get("density", 0.5), "graph.density", positive=True)
    if density > 1:
        raise ConfigError("graph.density", "must lie in (0, 1]")
    seed = _num(g.get("seed", 0), "graph.seed", integer=True)
    edges = None
    if kind == "explicit":
        raw = g.get("edges")
        if not raw:
            raise ConfigError("graph.edges", "explicit graph needs an edge list")
        edges = []
        for j, e in enumerate(raw):
            if not isinstance(e, (list, tuple)) or len(e) != 3:
                raise ConfigError(f"graph.edges[{j}]", "expected [src, dst, weight]")
            edges.append((_num(e[0], f"graph.edges[{j}]", integer=True),
                          _num(e[1], f"graph.edges[{j}]", integer=True),
                          _num(e[2], f"graph.edges[{j}]")))
        edges = tuple(edges)
    return GraphSpec(kind, n, density, seed, edges)


def parse_algorithm(a: dict) -> tuple[AlgoConfig, bool]:
    _check_keys(a, {"name", "alpha", "c0", "max_iters", "grad_tol", "batch_size", "tracking",
                    "workers"}, "algorithm")
    name = a.get("name", "cgt")
    if name not in ("cgt", "gt", "dgd_clip"):
        raise ConfigError("algorithm.name", f"unknown algorithm {name!r}")
    max_iters = _num(a.get("max_iters", 1000), "algorithm.max_iters", integer=True)
    if max_iters < 0:
        raise ConfigError("algorithm.max_iters", "must be >= 0")
    raw_c0 = a.get("c0", "inf" if name == "gt" else 5.0)
    auto = isinstance(raw_c0, str) and raw_c0.lower() == "auto"
    if auto and name == "gt":
        raise ConfigError("algorithm.c0", "gt does not clip; c0 must be inf")
    c0 = AlgoConfig.auto_c0(max_iters) if auto else _num(raw_c0, "algorithm.c0", positive=True,
                                                            allow_inf=True)
    if name == "gt" and c0 != math.inf:
        raise ConfigError("algorithm.c0", "gt does not clip; c0 must be inf")
    grad_tol = a.get("grad_tol")
    if grad_tol is not None:
        grad_tol = _num(grad_tol, "algorithm.grad_tol", positive=True)
    batch = a.get("batch_size")
    if batch is not None:
        batch = _num(batch, "algorithm.batch_size", positive=True, integer=True)
    tracking = a.get("tracking", "fresh")
    if tracking not in ("fresh", "same_batch"):
        raise ConfigError("algorithm.tracking", f"unknown tracking mode {tracking!r}")
    workers = _num(a.get("workers", 1), "algorithm.workers", positive=True, integer=True)
    cfg = AlgoConfig(name, _num(a.get("alpha", 0.05), "algorithm.alpha", positive=True), c0,
                     max_iters, grad_tol, batch, tracking, workers)
    return cfg, auto


def parse_data(d: dict) -> DataSpec:
    _check_keys(d, {"path", "synthetic", "synthetic_seed", "dim", "partition", "scale"}, "data")
    path, synth = d.get("path"), d.get("synthetic")
    if (path is None) == (synth is None):
        raise ConfigError("data", "give exactly one of 'path' or 'synthetic'")
    if synth is not None and synth != "a9a":
        raise ConfigError("data.synthetic", f"unknown synthetic dataset {synth!r}")
    rule = d.get("partition", "contiguous")
    if rule not in ("contiguous", "round_robin", "label_skewed"):
        raise ConfigError("data.partition", f"unknown rule {rule!r}")
    scale = d.get("scale", "none")
    if scale not in ("none", "max_abs"):
        raise ConfigError("data.scale", f"unknown scaling {scale!r}")
    dim = d.get("dim")
    if dim is not None:
        dim = _num(dim, "data.dim", positive=True, integer=True)
    return DataSpec(path, synth, _num(d.get("synthetic_seed", 0), "data.synthetic_seed",
                                      integer=True), dim, rule, scale)


def _agent_decls(obj: dict, n: int) -> list[dict]:
    """Expand the objective table into one declaration per agent."""
    if "agents" in obj:
        agents = obj["agents"]
        if not isinstance(agents, list):
            raise ConfigError("objective.agents", "expected an array of tables")
        if len(agents) != n:
            raise ConfigError("objective.agents",
                              f"expected {n} entries (graph.n_agents), got {len(agents)}")
        shared = {k: v for k, v in obj.items() if k != "agents"}
        return [{**shared, **a} for a in agents]
    decls = [dict() for _ in range(n)]
    for key, val in obj.items():
        if key in PER_AGENT_KEYS and isinstance(val, list):
            if len(val) != n:
                raise ConfigError(f"objective.{key}",
                                  f"expected {n} entries (graph.n_agents), got {len(val)}")
            for i in range(n):
                decls[i][key] = val[i]
        else:
            for i in range(n):
                decls[i][key] = val
    return decls


def _vector(val, fld, dim):
    arr = np.asarray(val, dtype=float)
    if arr.shape != (dim,):
        raise ConfigError(fld, f"expected {dim} entries, got shape {arr.shape}")
    return arr


OBJECTIVE_KEYS = {
    "logistic_lq": {"lam", "p", "literal_loss"},
    "quadratic": {"dim", "Q", "b", "const", "L", "center"},
    "power_norm": {"dim", "lam", "p", "center"},
    "custom_composite": {"dim", "terms", "f_min"},
}


def build_objective(decl: dict, fld: str, shard=None, dim: int | None = None) -> LocalObjective:
    kind = decl.get("kind")
    if kind in OBJECTIVE_KEYS:
        # "weight" belongs to a composite term, "dim" may be a shared default
        _check_keys(decl, OBJECTIVE_KEYS[kind] | {"kind", "smoothness", "weight", "dim"}, fld)
    meta = decl.get("smoothness")
    if meta is not None:
        meta = (float(meta[0]), float(meta[1]))
    if kind == "logistic_lq":
        if shard is None:
            raise ConfigError("data", "logistic_lq needs a [data] section")
        return LogisticLq(shard, _num(decl.get("lam", 0.0), f"{fld}.lam"),
                          _num(decl.get("p", 2.0), f"{fld}.p"),
                          literal=bool(decl.get("literal_loss", False)), smoothness_meta=meta)
    dim = decl.get("dim", dim)
    if dim is None:
        raise ConfigError(f"{fld}.dim", "required for closed-form objectives")
    dim = _num(dim, f"{fld}.dim", positive=True, integer=True)
    if kind == "quadratic":
        if "Q" in decl:
            Q = np.asarray(decl["Q"], dtype=float)
            if Q.shape != (dim, dim):
                raise ConfigError(f"{fld}.Q", f"expected {dim}x{dim}, got {Q.shape}")
            b = _vector(decl.get("b", [0.0] * dim), f"{fld}.b", dim)
            return Quadratic(Q, b, _num(decl.get("const", 0.0), f"{fld}.const"),
                             smoothness_meta=meta)
        L = _num(decl.get("L", 1.0), f"{fld}.L", positive=True)
        center = _vector(decl.get("center", [0.0] * dim), f"{fld}.center", dim)
        return Quadratic.isotropic(L, dim, center)
    if kind == "power_norm":
        p = _num(decl.get("p", 4.0), f"{fld}.p")
        lam = _num(decl.get("lam", 1.0), f"{fld}.lam")
        if p < 2 or lam < 0:
            raise ConfigError(fld, "need p >= 2 and lam >= 0")
        center = _vector(decl.get("center", [0.0] * dim), f"{fld}.center", dim)
        return PowerNorm(dim, lam, p, center, smoothness_meta=meta)
    if kind == "custom_composite":
        terms = decl.get("terms")
        if not terms:
            raise ConfigError(f"{fld}.terms", "composite needs at least one term")
        built = [build_objective({"dim": dim, **t}, f"{fld}.terms[{j}]", shard, dim)
                 for j, t in enumerate(terms)]
        weights = [float(t.get("weight", 1.0)) for t in terms]
        f_min = decl.get("f_min")
        return Composite(built, weights, None if f_min is None else float(f_min),
                         smoothness_meta=meta)
    raise ConfigError(f"{fld}.kind", f"unknown objective kind {kind!r}")


def from_dict(raw: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    _check_keys(raw, {"seed", "repeat", "output", "graph", "data", "objective", "algorithm",
                      "init", "metrics", "probe"}, "")
    graph = parse_graph(_table(raw, "graph", "graph"))
    algo, auto = parse_algorithm(_table(raw, "algorithm", "algorithm"))
    objective = _table(raw, "objective", "objective")
    data = None
    if "data" in raw:
        data = parse_data(_table(raw, "data", "data"))
        if data.path is not None:
            p = Path(data.path)
            if not p.is_absolute():
                p = (Path(base_dir) / p).resolve()
            if not p.exists():
                raise ConfigError("data.path", f"file not found: {p}")
            data = replace(data, path=str(p))
    decls = _agent_decls(objective, graph.n_agents)
    needs_data = any(_uses_data(d) for d in decls)
    if needs_data and data is None:
        raise ConfigError("data", "logistic_lq objectives need a [data] section")
    init = _table(raw, "init", "init", required=False)
    _check_keys(init, {"scale", "x0"}, "init")
    x0 = init.get("x0")
    if x0 is not None:
        x0 = tuple(tuple(float(t) for t in row) for row in x0)
        if len(x0) != graph.n_agents:
            raise ConfigError("init.x0", f"expected {graph.n_agents} rows (graph.n_agents)")
    metrics = _table(raw, "metrics", "metrics", required=False)
    _check_keys(metrics, {"mean_local_loss"}, "metrics")
    probe_raw = _table(raw, "probe", "probe", required=False)
    _check_keys(probe_raw, {"anchor", "radius", "n_samples", "n_points"}, "probe")
    anchor = probe_raw.get("anchor")
    probe = ProbeSpec(
        tuple(float(t) for t in anchor) if anchor is not None else None,
        _num(probe_raw.get("radius", 1.0), "probe.radius", positive=True),
        _num(probe_raw.get("n_samples", 64), "probe.n_samples", positive=True, integer=True),
        _num(probe_raw.get("n_points", 32), "probe.n_points", positive=True, integer=True),
    )
    repeat = _num(raw.get("repeat", 1), "repeat", positive=True, integer=True)
    cfg = ExperimentConfig(
        graph=graph, objective=objective, algorithm=algo, data=data,
        seed=_num(raw.get("seed", 0), "seed", integer=True), repeat=repeat,
        output=str(raw.get("output", "runs/run")),
        init_scale=_num(init.get("scale", 0.0), "init.scale"), x0=x0,
        mean_local_loss=bool(metrics.get("mean_local_loss", False)), probe=probe, c0_auto=auto,
    )
    # build once so shape errors surface at load time with field paths
    build_objectives(cfg)
    return cfg


def _uses_data(decl: dict) -> bool:
    if decl.get("kind") == "logistic_lq":
        return True
    return any(_uses_data(t) for t in decl.get("terms", []) or [])


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    return from_dict(raw, path.parent)


@functools.lru_cache(maxsize=8)
def _load_samples(data: DataSpec) -> tuple[tuple, int]:
    if data.synthetic == "a9a":
        samples = data_mod.synthetic_a9a(seed=data.synthetic_seed)
        dim = data.dim or data_mod.A9A_DIM
    else:
        samples, dim = data_mod.load_libsvm(data.path, data.dim)
    if data.scale == "max_abs":
        samples = data_mod.scale_max_abs(samples, dim)
    return tuple(samples), dim


@functools.lru_cache(maxsize=8)
def _shards(data: DataSpec, n_agents: int, seed: int):
    samples, dim = _load_samples(data)
    return data_mod.partition(list(samples), n_agents, data.partition, seed, dim)


def build_objectives(cfg: ExperimentConfig) -> list[LocalObjective]:
    decls = _agent_decls(cfg.objective, cfg.n_agents)
    shards = None
    if cfg.data is not None:
        shards = _shards(cfg.data, cfg.n_agents, cfg.seed)
    objs = []
    for i, d in enumerate(decls):
        fld = f"objective.agents[{i}]" if "agents" in cfg.objective else "objective"
        objs.append(build_objective(d, fld, shards[i] if shards else None,
                                    d.get("dim", cfg.objective.get("dim"))))
    dims = {o.dim for o in objs}
    if len(dims) != 1:
        raise ConfigError("objective", f"agents disagree on dimension: {sorted(dims)}")
    return objs


def build_mixing(cfg: ExperimentConfig) -> MixingPair:
    return build_mixing_pair(cfg.graph)


def initial_point(cfg: ExperimentConfig, dim: int, seed: int | None = None) -> np.ndarray:
    n = cfg.n_agents
    if cfg.x0 is not None:
        x0 = np.array(cfg.x0, dtype=float)
        if x0.shape != (n, dim):
            raise ConfigError("init.x0", f"expected shape ({n}, {dim}), got {x0.shape}")
        return x0
    rng = make_rng(cfg.seed if seed is None else seed)
    return cfg.init_scale * rng.standard_normal((n, dim))


def output_prefix(cfg: ExperimentConfig, override: str | None = None) -> Path:
    return resolve_prefix(cfg.output, override)


def resolve_prefix(default: str, override: str | None = None) -> Path:
    """``override`` wins; otherwise ``$CGT_OUTPUT_DIR`` replaces the directory of ``default``."""
    if override:
        return Path(override)
    prefix = Path(default)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        prefix = Path(env) / prefix.name
    return prefix
