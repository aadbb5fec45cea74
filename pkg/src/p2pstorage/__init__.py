"""Peer-to-peer storage allocation game: feasibility checks, asynchronous
noisy-best-response dynamics, and exact verification oracles."""

from .dynamics import GammaSchedule, RunResult, SimConfig, run
from .game import AllocationState, GameParams, Move
from .topology import Instance, Topology, build_complete, build_line, build_random_regular

__all__ = [
    "AllocationState",
    "GameParams",
    "GammaSchedule",
    "Instance",
    "Move",
    "RunResult",
    "SimConfig",
    "Topology",
    "build_complete",
    "build_line",
    "build_random_regular",
    "run",
]

__version__ = "0.1.0"
