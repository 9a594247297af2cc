"""Clipped gradient tracking and its two baselines.

State is stacked row-wise: ``x[i]`` and ``y[i]`` belong to agent ``i``.
One iteration of clipped gradient tracking is::

    x+ = R x - diag(alpha_i) y,   alpha_i = alpha * min(1, c0 / ||y_i||)
    y+ = C y + grad f(x+) - grad f(x)

``gt`` is the same update with ``c0 = inf``; ``dgd_clip`` drops ``y`` and
clips each agent's own gradient instead.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import NonFiniteState
from .graph import MixingPair
from .objective import LocalObjective
from .rng import make_rng

Algorithm = Literal["cgt", "gt", "dgd_clip"]
StopReason = Literal["max_iters", "grad_tol", "non_finite"]


@dataclass(frozen=True)
class AlgoConfig:
    algorithm: Algorithm = "cgt"
    alpha: float = 0.05
    c0: float = math.inf
    max_iters: int = 1000
    grad_tol: float | None = None
    batch_size: int | None = None  # None: full batch
    # minibatch tracking update: "fresh" subtracts the previous iteration's
    # stochastic gradient; "same_batch" re-evaluates both terms on one batch
    tracking: Literal["fresh", "same_batch"] = "fresh"
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ("cgt", "gt", "dgd_clip"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if self.algorithm == "gt" and self.c0 != math.inf:
            raise ValueError("gt runs without clipping; set c0 = inf")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.tracking not in ("fresh", "same_batch"):
            raise ValueError(f"unknown tracking mode {self.tracking!r}")

    @staticmethod
    def auto_c0(max_iters: int) -> float:
        """Threshold ``1/sqrt(K)`` for a budget of K iterations."""
        return 1.0 / math.sqrt(max(1, max_iters))


@dataclass
class NetworkState:
    x: np.ndarray
    y: np.ndarray
    k: int = 0
    # local gradients at x, on the latest minibatch when sampling; reused by
    # the next tracking update
    grad: np.ndarray | None = field(default=None, repr=False)
    # per-agent ||x_i^k - sum_j R_ij x_j^{k-1}||; zeros at k = 0
    step_norms: np.ndarray | None = field(default=None, repr=False)


class MinibatchSampler:
    """Per-agent minibatches without replacement within an epoch.

    Agents draw in index order from one shared generator, so the stream is
    fixed by the seed alone.
    """

    def __init__(self, sizes: Sequence[int], batch_size: int, seed: int):
        self.sizes = list(sizes)
        self.batch_size = batch_size
        self.rng = make_rng(seed)
        self._perm = [np.empty(0, dtype=np.int64) for _ in sizes]
        self._pos = [0] * len(sizes)

    def next(self) -> list[np.ndarray]:
        out = []
        for i, n in enumerate(self.sizes):
            b = min(self.batch_size, n)
            if self._pos[i] + b > len(self._perm[i]):
                self._perm[i] = self.rng.permutation(n)
                self._pos[i] = 0
            out.append(np.sort(self._perm[i][self._pos[i]:self._pos[i] + b]))
            self._pos[i] += b
        return out


def local_gradients(objs: Sequence[LocalObjective], x: np.ndarray, rows=None,
                    workers: int = 1) -> np.ndarray:
    """Stack ``grad f_i(x_i)``; optional per-agent row subsets; result order fixed by agent index."""
    rows = [None] * len(objs) if rows is None else rows

    def one(i):
        return objs[i].grad(x[i], rows[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grads = list(pool.map(one, range(len(objs))))
    else:
        grads = [one(i) for i in range(len(objs))]
    return np.stack(grads)


def clip_factor(y_i, c0: float) -> float:
    """``min(1, c0 / ||y_i||)``, with 1 for the zero vector."""
    n = float(np.linalg.norm(y_i))
    if n == 0.0 or n <= c0:
        return 1.0
    return c0 / n


def _check_finite(k: int, **arrays):
    for name, arr in arrays.items():
        if not np.isfinite(arr).all():
            raise NonFiniteState(k, name)


def initial_state(x0, objs: Sequence[LocalObjective], rows=None, workers: int = 1) -> NetworkState:
    """``y^0 = grad f(x^0)``, on the first minibatch when ``rows`` is given."""
    x0 = np.array(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        g0 = local_gradients(objs, x0, rows, workers)
    _check_finite(0, x=x0, y=g0)
    return NetworkState(x=x0, y=g0.copy(), k=0, grad=g0, step_norms=np.zeros(len(objs)))


def _tracking_step(state: NetworkState, mix: MixingPair, objs, cfg: AlgoConfig, c0: float,
                   rows=None) -> NetworkState:
    """``rows`` is the minibatch for the new point (None: full batch)."""
    x, y = state.x, state.y
    factors = np.array([clip_factor(yi, c0) for yi in y])
    step = (cfg.alpha * factors)[:, None] * y
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = mix.R @ x - step
        _check_finite(state.k + 1, x=x_new)
        g_new = local_gradients(objs, x_new, rows, cfg.workers)
        if rows is not None and cfg.tracking == "same_batch":
            g_old = local_gradients(objs, x, rows, cfg.workers)
        else:
            g_old = state.grad
        # grouped so that C y == g_old (e.g. one agent) yields y_new == g_new exactly
        y_new = (mix.C @ y - g_old) + g_new
    _check_finite(state.k + 1, y=y_new)
    return NetworkState(x=x_new, y=y_new, k=state.k + 1, grad=g_new,
                        step_norms=np.linalg.norm(step, axis=1))


def cgt_step(state: NetworkState, mix: MixingPair, objs: Sequence[LocalObjective],
             cfg: AlgoConfig, rows=None) -> NetworkState:
    return _tracking_step(state, mix, objs, cfg, cfg.c0, rows)


def gt_step(state: NetworkState, mix: MixingPair, objs: Sequence[LocalObjective],
            cfg: AlgoConfig, rows=None) -> NetworkState:
    return _tracking_step(state, mix, objs, cfg, math.inf, rows)


def dgd_clip_step(state: NetworkState, mix: MixingPair, objs: Sequence[LocalObjective],
                  cfg: AlgoConfig, rows=None) -> NetworkState:
    """Mix with R, then step along each agent's own clipped gradient.

    ``y`` is not part of the method; states store the local gradients there
    so the tracking-error column reads as gradient dispersion.
    """
    g = state.grad
    factors = np.array([clip_factor(gi, cfg.c0) for gi in g])
    step = (cfg.alpha * factors)[:, None] * g
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = mix.R @ state.x - step
        _check_finite(state.k + 1, x=x_new)
        g_new = local_gradients(objs, x_new, rows, cfg.workers)
    _check_finite(state.k + 1, grad=g_new)
    return NetworkState(x=x_new, y=g_new, k=state.k + 1, grad=g_new,
                        step_norms=np.linalg.norm(step, axis=1))


STEPS: dict[str, Callable] = {"cgt": cgt_step, "gt": gt_step, "dgd_clip": dgd_clip_step}


@dataclass
class RunResult:
    state: NetworkState
    stop_reason: StopReason
    iterations: int
    failure: NonFiniteState | None = None


def run(initial_x, mix: MixingPair, objs: Sequence[LocalObjective], cfg: AlgoConfig,
        recorder: Callable | None = None, seed: int = 0,
        mean_local_loss: bool = False) -> RunResult:
    """Iterate from ``initial_x`` until the budget, the gradient tolerance, or divergence.

    A metrics row is produced for every visited state ``k = 0, 1, ...`` and
    handed to ``recorder``. The gradient tolerance is tested on the
    u-weighted average iterate. Divergence ends the run with reason
    ``non_finite`` instead of raising.
    """
    from .metrics import MetricsTracker

    x0 = np.asarray(initial_x, dtype=float)
    n = mix.n_agents
    if x0.shape != (n, objs[0].dim) or len(objs) != n:
        raise ValueError(f"initial_x must be ({n}, {objs[0].dim}) with one objective per agent")
    step_fn = STEPS[cfg.algorithm]
    tracker = MetricsTracker(mix, objs, cfg, mean_local_loss)
    sampler = None
    if cfg.batch_size is not None:
        sizes = [o.n_samples for o in objs]
        if all(s is not None for s in sizes):
            sampler = MinibatchSampler(sizes, cfg.batch_size, seed)

    def next_rows():
        if sampler is None:
            return None
        return sampler.next()

    first = next_rows() if cfg.tracking == "fresh" else None
    try:
        state = initial_state(x0, objs, first, cfg.workers)
    except NonFiniteState as exc:
        return RunResult(NetworkState(x0, np.full_like(x0, np.nan)), "non_finite", 0, exc)
    while True:
        rec = tracker.record(state)
        if recorder is not None:
            recorder(rec)
        if cfg.grad_tol is not None and rec.grad_norm_avg <= cfg.grad_tol:
            return RunResult(state, "grad_tol", state.k)
        if state.k >= cfg.max_iters:
            return RunResult(state, "max_iters", state.k)
        rows = next_rows()
        try:
            state = step_fn(state, mix, objs, cfg, rows)
        except NonFiniteState as exc:
            return RunResult(state, "non_finite", state.k, exc)


@dataclass(frozen=True)
class StepsizeCheck:
    alpha_i: float
    alpha_bar_i: float
    alpha_bar: float
    lhs: float
    rhs: float
    slack: float  # rhs - lhs
    order_slack: float  # alpha_bar_i - alpha_bar
    upper_slack: float  # (||v|| / v_i) alpha_bar - alpha_bar_i

    def ok(self, rtol: float = 1e-12) -> bool:
        scale = max(1.0, abs(self.lhs), abs(self.rhs))
        return (self.slack >= -rtol * scale
                and self.order_slack >= -rtol * self.alpha_bar_i
                and self.upper_slack >= -rtol * self.alpha_bar_i)


def clipped_stepsize_check(y_i, v_i: float, gradF, alpha: float, c0: float,
                           v_norm: float | None = None) -> StepsizeCheck:
    """Compare the clipped local stepsize with its network-average counterpart.

    With ``a_i = alpha min(1, c0/||y_i||)``, ``ab_i = alpha min(1, c0/(v_i ||gradF||))``
    and ``ab = alpha min(1, c0/(||v|| ||gradF||))`` the checked relations are
    ``|a_i - ab_i| ||y_i|| <= ab_i ||y_i - v_i gradF||`` and
    ``ab <= ab_i <= (||v||/v_i) ab``. ``v_norm`` defaults to ``v_i``.
    """
    if not v_i > 0:
        raise ValueError("v_i must be positive")
    y_i = np.asarray(y_i, float)
    gradF = np.asarray(gradF, float)
    v_norm = v_i if v_norm is None else float(v_norm)
    if v_norm < v_i:
        raise ValueError("||v|| cannot be smaller than v_i")
    gF = float(np.linalg.norm(gradF))
    yn = float(np.linalg.norm(y_i))

    def clipped(norm):
        return alpha if norm <= c0 else alpha * c0 / norm

    a_i = clipped(yn)
    ab_i = clipped(v_i * gF)
    ab = clipped(v_norm * gF)
    lhs = abs(a_i - ab_i) * yn
    rhs = ab_i * float(np.linalg.norm(y_i - v_i * gradF))
    return StepsizeCheck(a_i, ab_i, ab, lhs, rhs, rhs - lhs, ab_i - ab,
                         (v_norm / v_i) * ab - ab_i)


def with_c0(cfg: AlgoConfig, c0: float) -> AlgoConfig:
    return replace(cfg, c0=c0)
