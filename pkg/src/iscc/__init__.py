"""Joint sensing-constrained AirComp transceiver design for multi-device OFDM."""

from .aircomp import (DesignVariables, MseBreakdown, align_phase, aligned_mse, mse_objective,
                      optimal_aggregation)
from .channel import CommChannel, SensingChannels, draw_comm_channel, draw_sensing_channels
from .config import (ConfigError, InfeasibleBudgetError, SensingBudget, SystemConfig,
                     dbm_to_linear, derive_sensing_budget, linear_to_dbm, load_config,
                     rng_substream)
from .optimizer import SolveReport, SolverOptions, solve

__version__ = "0.1.0"

__all__ = [
    "CommChannel", "ConfigError", "DesignVariables", "InfeasibleBudgetError", "MseBreakdown",
    "SensingBudget", "SensingChannels", "SolveReport", "SolverOptions", "SystemConfig",
    "align_phase", "aligned_mse", "dbm_to_linear", "derive_sensing_budget", "draw_comm_channel",
    "draw_sensing_channels", "linear_to_dbm", "load_config", "mse_objective",
    "optimal_aggregation", "rng_substream", "solve",
]
