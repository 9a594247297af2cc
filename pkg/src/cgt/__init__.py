"""Clipped gradient tracking over directed graphs for (L0, L1)-smooth objectives."""

from .algo import AlgoConfig, NetworkState, RunResult, cgt_step, dgd_clip_step, gt_step, run
from .graph import GraphSpec, MixingPair, build_mixing_pair, validate_mixing
from .metrics import CsvRecorder, TrajectoryRecord, consensus_error, tracking_error
from .objective import LocalObjective, LogisticLq, PowerNorm, Quadratic

__version__ = "0.1.0"

__all__ = [
    "AlgoConfig", "CsvRecorder", "GraphSpec", "LocalObjective", "LogisticLq", "MixingPair",
    "NetworkState", "PowerNorm", "Quadratic", "RunResult", "TrajectoryRecord",
    "build_mixing_pair", "cgt_step", "consensus_error", "dgd_clip_step", "gt_step", "run",
    "tracking_error", "validate_mixing",
]
