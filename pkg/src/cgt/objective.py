"""Local objectives and the generalized-smoothness toolbox.

Objectives expose ``value_grad(theta, rows=None)``; ``rows`` selects a
minibatch for data-driven kinds and is ignored elsewhere. Probes estimate
(L0, L1) smoothness and (ell, b) gradient dissimilarity by fitting affine
upper envelopes to sampled quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .data import Shard
from .errors import (DimensionMismatch, EmptyInput, NonFiniteInput, NonPositiveC,
                     UnknownMinimum)
from .rng import make_rng


class LocalObjective:
    """One agent's differentiable objective."""

    kind: str = ""
    dim: int
    smoothness_meta: tuple[float, float] | None = None

    def _value_grad(self, theta: np.ndarray, rows) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def value_grad(self, theta, rows=None) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatch(f"expected shape ({self.dim},), got {theta.shape}")
        if not np.isfinite(theta).all():
            raise NonFiniteInput("theta has non-finite entries")
        with np.errstate(over="ignore", invalid="ignore"):
            return self._value_grad(theta, rows)

    def value(self, theta, rows=None) -> float:
        return self.value_grad(theta, rows)[0]

    def grad(self, theta, rows=None) -> np.ndarray:
        return self.value_grad(theta, rows)[1]

    @property
    def n_samples(self) -> int | None:
        """Number of data rows for minibatching; None for closed-form kinds."""
        return None

    @property
    def f_min(self) -> float | None:
        return None

    def scaled(self, s: float) -> "LocalObjective":
        return Composite([self], weights=[s])


def power_term(theta: np.ndarray, lam: float, p: float) -> tuple[float, np.ndarray]:
    """``lam * ||theta||^p`` and its gradient (zero at the origin, p >= 2)."""
    r = np.float64(np.linalg.norm(theta))  # numpy scalar: overflow gives inf, not OverflowError
    if r == 0.0 or lam == 0.0:
        return 0.0, np.zeros_like(theta)
    return float(lam * np.power(r, p)), (lam * p * np.power(r, p - 2)) * theta


class LogisticLq(LocalObjective):
    """Mean binary cross-entropy over a shard plus ``lam * ||theta||^p``.

    ``literal=True`` swaps in the sign pattern of the printed benchmark
    formula, ``y*log(1+e^z) + (1-y)*(z - log(1+e^z))``, which has no
    minimizer when some label is 0; it is kept only for comparison runs.
    """

    kind = "logistic_lq"

    def __init__(self, shard: Shard, lam: float = 0.0, p: float = 2.0, literal: bool = False,
                 smoothness_meta=None):
        if lam < 0 or p < 2:
            raise ValueError("need lam >= 0 and p >= 2")
        self.shard = shard
        self.dim = shard.dim
        self.lam = float(lam)
        self.p = float(p)
        self.literal = literal
        self.smoothness_meta = smoothness_meta

    @property
    def n_samples(self) -> int:
        return len(self.shard)

    def _value_grad(self, theta, rows):
        X, y = self.shard.X, self.shard.y
        if rows is not None:
            X, y = X[rows], y[rows]
        z = X @ theta
        softplus = np.logaddexp(0.0, z)  # log(1 + e^z) without overflow
        sig = expit(z)
        if self.literal:
            losses = y * softplus + (1.0 - y) * (z - softplus)
            dz = y * sig + (1.0 - y) * (1.0 - sig)
        else:
            losses = softplus - y * z
            dz = sig - y
        m = len(y)
        val = float(losses.sum() / m)
        grad = X.T @ dz / m
        rv, rg = power_term(theta, self.lam, self.p)
        return val + rv, grad + rg


class Quadratic(LocalObjective):
    """``0.5 theta^T Q theta + b^T theta + const``; Q symmetric."""

    kind = "quadratic"

    def __init__(self, Q, b=None, const: float = 0.0, smoothness_meta=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch("Q must be square")
        self.Q = 0.5 * (Q + Q.T)
        self.dim = Q.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float).reshape(self.dim)
        self.const = float(const)
        self.smoothness_meta = smoothness_meta

    @classmethod
    def isotropic(cls, L: float, dim: int, center=None) -> "Quadratic":
        """``0.5 * L * ||theta - center||^2``."""
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(L * np.eye(dim), -L * c, 0.5 * L * float(c @ c), smoothness_meta=(L, 0.0))

    def _value_grad(self, theta, rows):
        Qt = self.Q @ theta
        return float(0.5 * theta @ Qt + self.b @ theta + self.const), Qt + self.b

    @property
    def f_min(self):
        w = np.linalg.eigvalsh(self.Q)
        if w.min() <= 0:
            if w.min() == 0 and w.max() == 0 and not self.b.any():
                return self.const
            return None
        return float(self.const - 0.5 * self.b @ np.linalg.solve(self.Q, self.b))


class PowerNorm(LocalObjective):
    """``lam * ||theta - center||^p``."""

    kind = "power_norm"

    def __init__(self, dim: int, lam: float = 1.0, p: float = 4.0, center=None,
                 smoothness_meta=None):
        if lam < 0 or p < 2:
            raise ValueError("need lam >= 0 and p >= 2")
        self.dim = int(dim)
        self.lam = float(lam)
        self.p = float(p)
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, float).reshape(self.dim)
        self.smoothness_meta = smoothness_meta

    def _value_grad(self, theta, rows):
        return power_term(theta - self.center, self.lam, self.p)

    @property
    def f_min(self):
        return 0.0


class Composite(LocalObjective):
    """Weighted sum of other objectives sharing one dimension."""

    kind = "custom_composite"

    def __init__(self, terms: Sequence[LocalObjective], weights=None, f_min: float | None = None,
                 smoothness_meta=None):
        if not terms:
            raise EmptyInput("composite needs at least one term")
        dims = {t.dim for t in terms}
        if len(dims) != 1:
            raise DimensionMismatch(f"terms disagree on dimension: {sorted(dims)}")
        self.terms = list(terms)
        self.weights = [1.0] * len(terms) if weights is None else [float(w) for w in weights]
        self.dim = dims.pop()
        self._f_min = f_min
        self.smoothness_meta = smoothness_meta

    def _value_grad(self, theta, rows):
        val = 0.0
        grad = np.zeros(self.dim)
        for w, t in zip(self.weights, self.terms):
            tv, tg = t._value_grad(theta, rows)
            val += w * tv
            grad += w * tg
        return val, grad

    @property
    def n_samples(self):
        sizes = {t.n_samples for t in self.terms} - {None}
        return sizes.pop() if len(sizes) == 1 else None

    @property
    def f_min(self):
        if self._f_min is not None:
            return self._f_min
        if len(self.terms) == 1 and self.terms[0].f_min is not None and self.weights[0] > 0:
            return self.weights[0] * self.terms[0].f_min
        return None


def evaluate(obj: LocalObjective, theta) -> tuple[float, np.ndarray]:
    return obj.value_grad(theta)


def global_value_grad(objs: Sequence[LocalObjective], theta) -> tuple[float, np.ndarray]:
    """F(theta) = mean_i f_i(theta) and its gradient, agents summed in index order."""
    val = 0.0
    grad = np.zeros(objs[0].dim)
    for o in objs:
        v, g = o.value_grad(theta)
        val += v
        grad += g
    n = len(objs)
    return val / n, grad / n


def combine_global_smoothness(locals_: Sequence[tuple[float, float]], ell: float,
                              b: float) -> tuple[float, float]:
    """Smoothness pair of the average of (L0_i, L1_i)-smooth functions.

    L0 = mean_i (L0_i + L1_i * b),  L1 = ell * mean_i L1_i.
    """
    if not locals_:
        raise EmptyInput("no local smoothness pairs")
    if ell < 1 or b < 0:
        raise ValueError("need ell >= 1 and b >= 0")
    arr = np.asarray(locals_, dtype=float)
    if (arr < 0).any():
        raise ValueError("smoothness constants must be nonnegative")
    n = len(arr)
    L0 = float(np.sum(arr[:, 0] + arr[:, 1] * b) / n)
    L1 = float(ell * np.sum(arr[:, 1]) / n)
    return L0, L1


def ab_constants(c: float) -> tuple[float, float]:
    """Descent-inequality multipliers A = 1 + e^c - (e^c - 1)/c and B = (e^c - 1)/c."""
    if not c > 0:
        raise NonPositiveC(f"c must be positive, got {c}")
    if c < 1e-8:
        return 1.0, 1.0
    B = math.expm1(c) / c
    A = 2.0 + math.expm1(c) - B
    return A, B


@dataclass(frozen=True)
class SmoothnessEstimate:
    L0_hat: float
    L1_hat: float
    n_samples: int
    max_residual: float
    degenerate: bool = False


@dataclass(frozen=True)
class DissimilarityEstimate:
    ell_hat: float
    b_hat: float
    n_samples: int
    max_residual: float = 0.0


def upper_envelope(x, r) -> tuple[float, float, bool]:
    """Affine bound ``r <= c + s*x`` with c, s >= 0 over all samples.

    Among valid bounds, picks the one lowest at the mean of ``x`` (the
    supporting line of the upper convex hull there), preferring the smaller
    slope on ties. Returns ``(c, s, degenerate)``; ``degenerate`` is set when
    all ``x`` coincide and the slope cannot be identified.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if x.size == 0:
        raise EmptyInput("no samples")
    r_max = float(r.max())
    if np.ptp(x) == 0:
        return max(r_max, 0.0), 0.0, True

    order = np.lexsort((r, x))
    hull: list[tuple[float, float]] = []
    for i in order:
        p = (x[i], r[i])
        if hull and hull[-1][0] == p[0]:
            hull.pop()  # same x: keep the larger r (sorted ascending by r)
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            # drop the middle point unless it lies strictly above the chord
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)

    x_bar = float(x.mean())
    s = c = None
    for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
        if x1 <= x_bar < x2:
            s = (y2 - y1) / (x2 - x1)
            c = y1 - s * x1
            break
    if s is None or s < 0:
        c, s = max(r_max, 0.0), 0.0
    elif c < 0:
        pos = x > 0
        c, s = 0.0, float(np.max(r[pos] / x[pos])) if pos.any() else 0.0
    resid = float(np.max(r - c - s * x))
    while resid > 0:  # rounding can leave a residual after one bump
        c = max(c + resid, float(np.nextafter(c, np.inf)))
        resid = float(np.max(r - c - s * x))
    return float(c), float(s), False


def probe_smoothness(obj: LocalObjective, anchor, radius: float = 1.0, n_samples: int = 64,
                     seed: int = 0) -> SmoothnessEstimate:
    """Empirical (L0, L1) from gradient-difference ratios near ``anchor``.

    Half the pairs are short random segments inside the ball around the
    anchor; the rest are consecutive points of a normalized gradient-descent
    path started at the anchor. Each pair gives a ratio
    ``||grad(a) - grad(b)|| / ||a - b||`` and the gradient norm at ``b``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    anchor = np.asarray(anchor, dtype=float)
    d = obj.dim
    rng = make_rng(seed)
    sep = 1e-2 * radius
    thetas, varthetas = [], []
    n_ball = n_samples // 2
    for _ in range(n_ball):
        w = rng.standard_normal(d)
        w *= radius * rng.random() ** (1.0 / d) / np.linalg.norm(w)
        e = rng.standard_normal(d)
        e *= sep / np.linalg.norm(e)
        base = anchor + w
        thetas.append(base + e)
        varthetas.append(base)
    step = radius / max(1, n_samples - n_ball)
    cur = anchor.copy()
    for _ in range(n_samples - n_ball):
        g = obj.grad(cur)
        gn = np.linalg.norm(g)
        if gn > 0:
            direction = g / gn
        else:
            direction = rng.standard_normal(d)
            direction /= np.linalg.norm(direction)
        nxt = cur - step * direction
        thetas.append(nxt)
        varthetas.append(cur)
        cur = nxt

    ratios = np.empty(n_samples)
    gnorms = np.empty(n_samples)
    for j, (a, b) in enumerate(zip(thetas, varthetas)):
        gb = obj.grad(b)
        ratios[j] = np.linalg.norm(obj.grad(a) - gb) / np.linalg.norm(a - b)
        gnorms[j] = np.linalg.norm(gb)
    L0, L1, degenerate = upper_envelope(gnorms, ratios)
    resid = float(np.max(ratios - L0 - L1 * gnorms))
    return SmoothnessEstimate(L0, L1, n_samples, resid, degenerate)


def probe_dissimilarity(objs: Sequence[LocalObjective], sample_points) -> DissimilarityEstimate:
    """Fit ``||grad f_i - grad F|| <= (ell - 1)||grad F|| + b`` over agents and points."""
    if not objs:
        raise EmptyInput("no objectives")
    dims = {o.dim for o in objs}
    if len(dims) != 1:
        raise DimensionMismatch(f"objectives disagree on dimension: {sorted(dims)}")
    pts = [np.asarray(p, dtype=float) for p in sample_points]
    if not pts:
        raise EmptyInput("need at least one sample point")
    devs, gF_norms = [], []
    for theta in pts:
        G = np.stack([o.grad(theta) for o in objs])
        gF = G.mean(axis=0)
        devs.extend(np.linalg.norm(G - gF, axis=1))
        gF_norms.extend([np.linalg.norm(gF)] * len(objs))
    b, slope, _ = upper_envelope(gF_norms, devs)
    b = max(b, float(np.finfo(float).eps))
    resid = float(np.max(np.asarray(devs) - b - slope * np.asarray(gF_norms)))
    return DissimilarityEstimate(1.0 + slope, b, len(pts), resid)


@dataclass(frozen=True)
class GapReport:
    max_violation: float
    max_rel_violation: float
    n_points: int

    @property
    def ok(self) -> bool:
        return self.max_rel_violation <= 1e-9


def suboptimality_gap_check(obj: LocalObjective, L0: float, L1: float, points,
                            f_min: float | None = None) -> GapReport:
    """Evaluate ``||grad f||^2 <= 2 (L0 + 2 L1 ||grad f||)(f - f_min)`` at each point."""
    f_min = obj.f_min if f_min is None else f_min
    if f_min is None:
        raise UnknownMinimum(f"no known minimum for {obj.kind}")
    worst = -np.inf
    worst_rel = -np.inf
    n = 0
    for theta in points:
        val, g = obj.value_grad(theta)
        gn = float(np.linalg.norm(g))
        lhs = gn * gn
        rhs = 2.0 * (L0 + 2.0 * L1 * gn) * (val - f_min)
        worst = max(worst, lhs - rhs)
        worst_rel = max(worst_rel, (lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
        n += 1
    return GapReport(float(worst), float(worst_rel), n)


def stepsize_bound(u, v, L_hat: float) -> float:
    """Diagnostic stepsize ceiling ``u^T v / (9 L N ||v||^2)``."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    return float(u @ v / (9.0 * L_hat * len(v) * (v @ v)))


def smoothness_surrogate(L0: float, L1: float, grad_bound: float, c: float = 1.0) -> float:
    """``A*L0 + B*L1*G``: a single Lipschitz-like constant over a bounded-gradient region."""
    A, B = ab_constants(c)
    return A * L0 + B * L1 * grad_bound
