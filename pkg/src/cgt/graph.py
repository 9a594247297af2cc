"""Directed communication structure: pull matrix R, push matrix C and their spectra.

Edges are ``(src, dst)`` pairs: agent ``dst`` receives from ``src``. Both
mixing matrices are built on the same support ``A[dst, src] > 0``; ``R`` is
that support normalized by rows, ``C`` by columns.
"""

from __future__ import annotations

import io
from collections import deque
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ConnectivityError, NoConvergence, WeightError
from .rng import make_rng

GraphKind = Literal["directed_ring", "random_strongly_connected", "explicit"]

STOCHASTIC_TOL = 1e-12
EIG_TOL = 1e-12
EIG_MAX_ITERS = 100_000
STALL_STEPS = 2_000
STALL_TOL = 1e-7


@dataclass(frozen=True)
class GraphSpec:
    kind: GraphKind
    n_agents: int
    density: float = 0.5
    seed: int = 0
    # 1-based (src, dst, weight) triples; explicit kind only
    edges: tuple[tuple[int, int, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("directed_ring", "random_strongly_connected", "explicit"):
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if int(self.n_agents) < 1:
            raise ValueError("n_agents must be positive")
        if self.kind == "random_strongly_connected" and not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        if self.kind == "explicit" and not self.edges:
            raise ValueError("explicit graph needs an edge list")
        if self.edges is not None:
            object.__setattr__(
                self, "edges", tuple((int(s), int(d), float(w)) for s, d, w in self.edges)
            )


@dataclass(frozen=True)
class MixingPair:
    """Row-stochastic ``R``, column-stochastic ``C`` and their Perron data."""

    R: np.ndarray
    C: np.ndarray
    u: np.ndarray
    v: np.ndarray
    rho_R: float
    rho_C: float

    @property
    def n_agents(self) -> int:
        return self.R.shape[0]

    @classmethod
    def from_matrices(cls, R, C, seed: int = 0) -> "MixingPair":
        R = np.array(R, dtype=float)
        C = np.array(C, dtype=float)
        report = validate_mixing(R, C)
        if not report.ok:
            _raise_for(report)
        u, v = compute_eigenvectors(R, C)
        n = R.shape[0]
        ones = np.ones(n)
        rho_R = spectral_radius_deflated(R, ones, u, seed=seed)
        rho_C = spectral_radius_deflated(C, v, ones, seed=seed)
        for arr in (R, C, u, v):
            arr.setflags(write=False)
        return cls(R=R, C=C, u=u, v=v, rho_R=rho_R, rho_C=rho_C)

    def to_text(self) -> str:
        n = self.n_agents
        out = io.StringIO()
        out.write(f"N={n}\n")
        for M in (self.R, self.C):
            for row in M:
                out.write(" ".join(format(float(x), ".17g") for x in row))
                out.write("\n")
            if M is self.R:
                out.write("\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "MixingPair":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("N="):
            raise ValueError("mixing pair text must start with 'N=<int>'")
        n = int(lines[0][2:])
        body = lines[1:]
        if len(body) < 2 * n + 1 or body[n].strip():
            raise ValueError("expected N rows of R, a blank line, then N rows of C")
        R = np.array([[float(t) for t in ln.split()] for ln in body[:n]])
        C = np.array([[float(t) for t in ln.split()] for ln in body[n + 1 : 2 * n + 1]])
        if R.shape != (n, n) or C.shape != (n, n):
            raise ValueError("matrix rows do not match N")
        return cls.from_matrices(R, C)


@dataclass
class ValidationReport:
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, passed in self.checks.items() if not passed]

    def __str__(self) -> str:
        lines = []
        for name, passed in self.checks.items():
            line = f"{'pass' if passed else 'FAIL'}  {name}"
            if name in self.details:
                line += f"  ({self.details[name]})"
            lines.append(line)
        return "\n".join(lines)


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    """Nodes reachable from ``start`` following edges src -> dst where adj[dst, src] > 0."""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    queue = deque([start])
    out_nbrs = [np.flatnonzero(adj[:, j] > 0) for j in range(n)]
    while queue:
        j = queue.popleft()
        for i in out_nbrs[j]:
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return seen


def has_spanning_tree(adj: np.ndarray) -> bool:
    """True if some root reaches every node along edges j -> i with ``adj[i, j] > 0``."""
    n = adj.shape[0]
    return any(_reachable(adj, r).all() for r in range(n))


def is_strongly_connected(adj: np.ndarray) -> bool:
    # reachability from node 0 in the graph and in its reverse
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def validate_mixing(R, C) -> ValidationReport:
    """Check the mixing-matrix conditions one by one; never raises."""
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    rep = ValidationReport()
    square = R.ndim == 2 and R.shape[0] == R.shape[1] and R.shape == C.shape
    rep.checks["square"] = square
    if not square:
        rep.details["square"] = f"R{R.shape}, C{C.shape}"
        return rep
    finite = bool(np.isfinite(R).all() and np.isfinite(C).all())
    rep.checks["finite"] = finite
    rep.checks["nonnegative"] = bool((R >= 0).all() and (C >= 0).all())
    row_err = float(np.max(np.abs(R.sum(axis=1) - 1.0))) if finite else np.inf
    col_err = float(np.max(np.abs(C.sum(axis=0) - 1.0))) if finite else np.inf
    rep.checks["R row-stochastic"] = row_err <= STOCHASTIC_TOL
    rep.details["R row-stochastic"] = f"max |row sum - 1| = {row_err:.3g}"
    rep.checks["C column-stochastic"] = col_err <= STOCHASTIC_TOL
    rep.details["C column-stochastic"] = f"max |col sum - 1| = {col_err:.3g}"
    rep.checks["positive diagonal"] = bool((np.diag(R) > 0).all() and (np.diag(C) > 0).all())
    rep.checks["G_R has spanning tree"] = has_spanning_tree(R)
    # reversing every edge preserves strong connectivity, so C's support suffices for C^T
    rep.checks["G_C^T strongly connected"] = is_strongly_connected(C)
    return rep


def _raise_for(report: ValidationReport):
    failed = report.failures()
    weight_checks = {"nonnegative", "positive diagonal", "finite", "square",
                     "R row-stochastic", "C column-stochastic"}
    if any(f in weight_checks for f in failed):
        raise WeightError("mixing matrices rejected: " + ", ".join(failed))
    raise ConnectivityError("mixing matrices rejected: " + ", ".join(failed))


def _stationary(M: np.ndarray, n: int) -> np.ndarray:
    """Fixed point of ``w <- M w`` scaled to sum ``n``; M must preserve column sums."""
    w = np.ones(n)
    for _ in range(EIG_MAX_ITERS):
        w_next = M @ w
        w_next *= n / w_next.sum()
        resid = np.max(np.abs(w_next - w))
        w = w_next
        if resid <= EIG_TOL * max(1.0, np.max(np.abs(w))):
            break
    else:
        raise NoConvergence(f"power iteration did not reach {EIG_TOL:g} in {EIG_MAX_ITERS} steps")
    return w


def compute_eigenvectors(R, C) -> tuple[np.ndarray, np.ndarray]:
    """Left Perron vector ``u`` of R and right Perron vector ``v`` of C, each summing to N."""
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    n = R.shape[0]
    u = _stationary(R.T, n)
    v = _stationary(C, n)
    return u, v


def spectral_radius_deflated(M, a, b, seed: int = 0, tol: float = 1e-10,
                             max_iters: int = EIG_MAX_ITERS, block: int = 8,
                             window: int = 20) -> float:
    """Spectral radius of ``M - (1/N) a b^T``.

    Orthogonal (block power) iteration with a Rayleigh-Ritz projection, so a
    dominant complex-conjugate pair converges as well as a real eigenvalue.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    D = M - np.outer(np.asarray(a, float), np.asarray(b, float)) / n
    s = min(n, block)
    rng = make_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, s)))
    history: deque[float] = deque(maxlen=window)
    for it in range(max_iters):
        Z = D @ Q
        if not np.any(Z):
            return 0.0
        new = float(np.max(np.abs(np.linalg.eigvals(Q.T @ Z))))
        if s == n:
            return new
        # stable over a whole window, not just one step: slow contraction fools a 1-step test
        if len(history) == window:
            spread = max(abs(new - h) for h in history)
            if spread <= tol * new + 1e-15:
                return new
            # near-defective spectra: rounding caps accuracy near sqrt(eps), so take the
            # window max once the estimate has stalled at that level for a long time
            if it >= STALL_STEPS and spread <= STALL_TOL * new:
                return max(max(history), new)
        history.append(new)
        Q, _ = np.linalg.qr(Z)
    raise NoConvergence(f"deflated spectral radius not within {tol:g} after {max_iters} steps")


def support_matrix(gspec: GraphSpec) -> np.ndarray:
    n = gspec.n_agents
    if gspec.kind == "directed_ring":
        A = np.eye(n)
        for i in range(n):
            A[i, (i + 1) % n] = 1.0
        return A
    if gspec.kind == "random_strongly_connected":
        rng = make_rng(gspec.seed)
        A = (rng.random((n, n)) < gspec.density).astype(float)
        np.fill_diagonal(A, 1.0)
        if not is_strongly_connected(A):
            perm = rng.permutation(n)
            for k in range(n):
                A[perm[(k + 1) % n], perm[k]] = 1.0
        return A
    A = np.zeros((n, n))
    for src, dst, w in gspec.edges:
        if not (1 <= src <= n and 1 <= dst <= n):
            raise WeightError(f"edge ({src}, {dst}) outside 1..{n}")
        if w < 0:
            raise WeightError(f"negative weight on edge ({src}, {dst})")
        A[dst - 1, src - 1] = w
    if (np.diag(A) <= 0).any():
        raise WeightError("every node needs a positive self-loop")
    return A


def build_mixing_pair(gspec: GraphSpec) -> MixingPair:
    A = support_matrix(gspec)
    R = A / A.sum(axis=1, keepdims=True)
    col = A.sum(axis=0, keepdims=True)
    C = A / col
    return MixingPair.from_matrices(R, C, seed=gspec.seed)


def ring(n: int) -> MixingPair:
    return build_mixing_pair(GraphSpec("directed_ring", n))


def from_edges(n: int, edges: Sequence[tuple[int, int, float]]) -> MixingPair:
    return build_mixing_pair(GraphSpec("explicit", n, edges=tuple(edges)))
