"""Core numerical modules."""

from .chain import FiniteChain, build_chain, build_chain_family, stationary_distribution
from .env_model import EnvModel, EnvWindow, GapLaw, MarkLaw, sample_window
from .rate_kernel import JumpRow, build_jump_row
from .stats import Estimate
from .walker import Horizon, Trajectory, simulate

__all__ = [
    "EnvModel",
    "EnvWindow",
    "Estimate",
    "FiniteChain",
    "GapLaw",
    "Horizon",
    "JumpRow",
    "MarkLaw",
    "Trajectory",
    "build_chain",
    "build_chain_family",
    "build_jump_row",
    "sample_window",
    "simulate",
    "stationary_distribution",
]
