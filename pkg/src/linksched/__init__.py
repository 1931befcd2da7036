"""GCN-guided MWIS solvers for wireless link scheduling."""

from linksched.graph import ConflictGraph, MultiChannelMap
from linksched.greedy import SolveResult, cgs, lgs, lgs_truncated, is_independent

__version__ = "0.1.0"

__all__ = [
    "ConflictGraph",
    "MultiChannelMap",
    "SolveResult",
    "cgs",
    "lgs",
    "lgs_truncated",
    "is_independent",
]
