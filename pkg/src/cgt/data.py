"""LIBSVM text parsing, agent partitioning, and a seeded a9a-shaped stand-in."""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, TextIO

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, TooManyAgents
from .rng import make_rng

PartitionRule = Literal["contiguous", "round_robin", "label_skewed"]

A9A_DIM = 123
A9A_N_TRAIN = 32561
GZIP_SUFFIXES = (".gz", ".gzip")


@dataclass(frozen=True)
class SparseSample:
    label: float
    features: tuple[tuple[int, float], ...]


@dataclass
class Shard:
    samples: list[SparseSample]
    dim: int
    _X: sp.csr_matrix | None = field(default=None, repr=False, compare=False)
    _y: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.samples:
            raise ValueError("shard must be nonempty")

    def __len__(self):
        return len(self.samples)

    @property
    def X(self) -> sp.csr_matrix:
        if self._X is None:
            self._X = to_csr(self.samples, self.dim)
        return self._X

    @property
    def y(self) -> np.ndarray:
        if self._y is None:
            self._y = np.array([s.label for s in self.samples], dtype=float)
        return self._y


def to_csr(samples: list[SparseSample], dim: int) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    for s in samples:
        for j, val in s.features:
            if j > dim:
                raise ValueError(f"feature index {j} exceeds dim {dim}")
            indices.append(j - 1)
            values.append(val)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(values, float), np.array(indices, np.int64), np.array(indptr, np.int64)),
        shape=(len(samples), dim),
    )


def _map_label(tok: str, lineno: int) -> float:
    try:
        lab = float(tok)
    except ValueError:
        raise ParseError(lineno, f"label {tok!r} is not numeric") from None
    if lab == 1.0:
        return 1.0
    if lab == -1.0 or lab == 0.0:
        return 0.0
    raise ParseError(lineno, f"label {tok!r} is not binary")


def parse_line(line: str, lineno: int) -> SparseSample | None:
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    toks = body.split()
    label = _map_label(toks[0], lineno)
    feats = []
    last = 0
    for tok in toks[1:]:
        idx_s, sep, val_s = tok.partition(":")
        if not sep:
            raise ParseError(lineno, f"missing ':' in {tok!r}")
        try:
            idx = int(idx_s)
            val = float(val_s)
        except ValueError:
            raise ParseError(lineno, f"non-numeric token {tok!r}") from None
        if idx < 1:
            raise ParseError(lineno, f"feature index {idx} must be >= 1")
        if idx <= last:
            raise ParseError(lineno, f"index {idx} not increasing (previous {last})")
        if not np.isfinite(val):
            raise ParseError(lineno, f"non-finite value in {tok!r}")
        feats.append((idx, val))
        last = idx
    return SparseSample(label, tuple(feats))


def parse_libsvm(stream: Iterable[str], dim: int | None = None) -> tuple[list[SparseSample], int]:
    """Parse LIBSVM lines; labels {-1,+1} or {0,1} become {0,1}.

    ``dim`` defaults to the largest feature index seen; a declared ``dim``
    smaller than that is an error.
    """
    samples = []
    max_idx = 0
    for lineno, line in enumerate(stream, start=1):
        s = parse_line(line, lineno)
        if s is None:
            continue
        if s.features:
            max_idx = max(max_idx, s.features[-1][0])
        samples.append(s)
    if dim is None:
        dim = max_idx
    elif max_idx > dim:
        raise ValueError(f"declared dim {dim} < max feature index {max_idx}")
    return samples, dim


def open_text(path: str | Path) -> TextIO:
    path = Path(path)
    if path.suffix in GZIP_SUFFIXES:
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="ascii")
    return open(path, encoding="ascii")


def load_libsvm(path: str | Path, dim: int | None = None) -> tuple[list[SparseSample], int]:
    with open_text(path) as fh:
        return parse_libsvm(fh, dim)


def format_sample(s: SparseSample) -> str:
    label = "+1" if s.label == 1.0 else "-1"
    return " ".join([label] + [f"{j}:{v!r}" for j, v in s.features])


def serialize_libsvm(samples: Iterable[SparseSample], stream: TextIO):
    for s in samples:
        stream.write(format_sample(s))
        stream.write("\n")


def scale_max_abs(samples: list[SparseSample], dim: int) -> list[SparseSample]:
    """Divide each feature by its largest absolute value over the sample set."""
    scale = np.zeros(dim + 1)
    for s in samples:
        for j, v in s.features:
            scale[j] = max(scale[j], abs(v))
    scale[scale == 0] = 1.0
    return [SparseSample(s.label, tuple((j, v / scale[j]) for j, v in s.features)) for s in samples]


def partition(samples: list[SparseSample], n_agents: int, rule: PartitionRule = "contiguous",
              seed: int = 0, dim: int | None = None) -> list[Shard]:
    """Split samples into ``n_agents`` disjoint shards covering the input.

    ``contiguous`` and ``round_robin`` give sizes differing by at most one;
    ``label_skewed`` stable-sorts by label before cutting contiguously. The
    three rules are deterministic, so ``seed`` is accepted only for a uniform
    call signature.
    """
    n = len(samples)
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if n_agents > n:
        raise TooManyAgents(f"{n_agents} agents but only {n} samples")
    if dim is None:
        dim = max((s.features[-1][0] for s in samples if s.features), default=1)
    order = np.arange(n)
    if rule == "round_robin":
        groups = [order[i::n_agents] for i in range(n_agents)]
    elif rule in ("contiguous", "label_skewed"):
        if rule == "label_skewed":
            order = np.argsort([s.label for s in samples], kind="stable")
        groups = np.array_split(order, n_agents)
    else:
        raise ValueError(f"unknown partition rule {rule!r}")
    return [Shard([samples[i] for i in g], dim) for g in groups]


# one-hot group widths of the a9a feature encoding (sums to 123)
A9A_GROUPS = (5, 8, 5, 16, 5, 7, 14, 6, 5, 2, 2, 2, 5, 41)


def synthetic_a9a(n_samples: int = A9A_N_TRAIN, seed: int = 0,
                  positive_rate: float = 0.24) -> list[SparseSample]:
    """A seeded stand-in with a9a's shape: 123 binary one-hot features in 14 groups.

    Each sample activates one feature per group (a group is left empty with
    small probability, as with missing values in the original). Labels follow
    a noisy logistic model over the active features.
    """
    rng = make_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(A9A_GROUPS)[:-1]])
    n_groups = len(A9A_GROUPS)
    picks = np.empty((n_samples, n_groups), dtype=np.int64)
    for g, width in enumerate(A9A_GROUPS):
        probs = rng.dirichlet(np.full(width, 0.8))
        picks[:, g] = offsets[g] + rng.choice(width, size=n_samples, p=probs)
    present = rng.random((n_samples, n_groups)) > 0.01
    weights = rng.normal(0.0, 1.0, A9A_DIM)
    scores = np.where(present, weights[picks], 0.0).sum(axis=1)
    scores += rng.logistic(0.0, 1.0, n_samples)
    cut = np.quantile(scores, 1.0 - positive_rate)
    labels = (scores > cut).astype(float)
    out = []
    for i in range(n_samples):
        cols = np.sort(picks[i][present[i]]) + 1
        out.append(SparseSample(float(labels[i]), tuple((int(j), 1.0) for j in cols)))
    return out
