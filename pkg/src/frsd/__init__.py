"""Decentralized optimization over directed graphs with row-stochastic weights.

FRSD and nine baseline methods run as per-node message-passing state
machines inside a synchronous round simulator.
"""

from .digraph import (
    DiGraph,
    build_uniform_column_stochastic,
    build_uniform_row_stochastic,
    generate_strongly_connected,
    spectral_gap,
    stationary_distribution,
)
from .engine import SimulationConfig, Trace, fit_linear_rate, run, solve_centralized
from .protocols import ALGORITHM_NAMES, comm_size, get_algorithm, memory_size

__all__ = [
    "ALGORITHM_NAMES",
    "DiGraph",
    "SimulationConfig",
    "Trace",
    "build_uniform_column_stochastic",
    "build_uniform_row_stochastic",
    "comm_size",
    "fit_linear_rate",
    "generate_strongly_connected",
    "get_algorithm",
    "memory_size",
    "run",
    "solve_centralized",
    "spectral_gap",
    "stationary_distribution",
]
