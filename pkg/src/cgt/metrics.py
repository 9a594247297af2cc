"""Per-iteration diagnostics and the trajectory CSV format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch
from .objective import LocalObjective

CSV_COLUMNS = ("k", "loss_avg", "grad_norm_avg", "consensus_err_sq", "tracking_err_sq",
               "max_local_step", "min_grad_so_far")


@dataclass(frozen=True)
class TrajectoryRecord:
    k: int
    loss_avg: float
    grad_norm_avg: float
    consensus_err_sq: float
    tracking_err_sq: float
    max_local_step: float
    min_grad_so_far: float
    mean_local_loss: float | None = None


def _check(M: np.ndarray, w: np.ndarray):
    if M.ndim != 2 or w.shape != (M.shape[0],):
        raise DimensionMismatch(f"matrix {M.shape} and weights {w.shape} do not conform")


def averaged_iterate(x, u) -> np.ndarray:
    """``(1/N) u^T x``."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    _check(x, u)
    return u @ x / len(u)


def consensus_error(x, u) -> float:
    """Squared Frobenius norm of ``x - 1 xbar^T``."""
    x = np.asarray(x, float)
    dev = x - averaged_iterate(x, u)
    return float(np.sum(dev * dev))


def tracking_error(y, v) -> float:
    """Squared Frobenius norm of ``y - v ybar^T`` with ``ybar = (1/N) 1^T y``."""
    y = np.asarray(y, float)
    v = np.asarray(v, float)
    _check(y, v)
    dev = y - np.outer(v, y.mean(axis=0))
    return float(np.sum(dev * dev))


def _safe(f):
    with np.errstate(over="ignore", invalid="ignore"):
        return f()


class MetricsTracker:
    """Builds one record per state; keeps the running minimum gradient norm."""

    def __init__(self, mix, objs: Sequence[LocalObjective], cfg=None, mean_local_loss: bool = False):
        self.mix = mix
        self.objs = list(objs)
        self.cfg = cfg
        self.mean_local_loss = mean_local_loss
        self.min_grad = math.inf

    def record(self, state) -> TrajectoryRecord:
        rec = record_step(state, self.mix, self.objs, self.cfg, self.min_grad, self.mean_local_loss)
        self.min_grad = rec.min_grad_so_far
        return rec


def record_step(state, mix, objs: Sequence[LocalObjective], cfg=None,
                min_grad_so_far: float = math.inf,
                mean_local_loss: bool = False) -> TrajectoryRecord:
    """Metrics of ``state``; F and grad F at the averaged iterate are always full batch."""
    xbar = averaged_iterate(state.x, mix.u)
    n = len(objs)
    loss = 0.0
    grad = np.zeros_like(xbar)
    finite = bool(np.isfinite(xbar).all())
    if finite:
        with np.errstate(over="ignore", invalid="ignore"):
            for o in objs:
                v, g = o.value_grad(xbar)
                loss += v
                grad += g
        loss /= n
        grad /= n
        gnorm = float(np.linalg.norm(grad))
    else:
        loss, gnorm = math.nan, math.nan
    local = None
    if mean_local_loss:
        local = _safe(lambda: float(np.mean([o.value(xi) for o, xi in zip(objs, state.x)])))
    steps = state.step_norms
    max_step = float(np.max(steps)) if steps is not None and len(steps) else 0.0
    best = min(min_grad_so_far, gnorm) if not math.isnan(gnorm) else min_grad_so_far
    return TrajectoryRecord(
        k=state.k,
        loss_avg=float(loss),
        grad_norm_avg=gnorm,
        consensus_err_sq=_safe(lambda: consensus_error(state.x, mix.u)),
        tracking_err_sq=_safe(lambda: tracking_error(state.y, mix.v)),
        max_local_step=max_step,
        min_grad_so_far=best,
        mean_local_loss=local,
    )


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def record_row(rec: TrajectoryRecord, extra: bool = False) -> list[str]:
    row = [str(rec.k)] + [fmt(getattr(rec, c)) for c in CSV_COLUMNS[1:]]
    if extra:
        row.append(fmt(rec.mean_local_loss if rec.mean_local_loss is not None else math.nan))
    return row


def header(extra: bool = False) -> list[str]:
    return list(CSV_COLUMNS) + (["mean_local_loss"] if extra else [])


class CsvRecorder:
    """Append-only trajectory sink; also keeps rows in memory."""

    def __init__(self, path: str | Path | None = None, extra: bool = False):
        self.path = Path(path) if path is not None else None
        self.extra = extra
        self.records: list[TrajectoryRecord] = []
        self._fh = None
        self._writer = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="", encoding="ascii")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(header(extra))

    def __call__(self, rec: TrajectoryRecord):
        self.records.append(rec)
        if self._writer is not None:
            self._writer.writerow(record_row(rec, self.extra))

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        rows = [[float(t) for t in r] for r in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    return {c: data[:, j] for j, c in enumerate(cols)}

