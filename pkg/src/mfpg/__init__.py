"""Mean-field and N-player portfolio games with relative-performance CRRA preferences.

Submodules
----------
market
    Types, coefficient models, scenarios, wealth simulation, the index.
closed_form
    Equilibria and values for type-measurable coefficients.
bsde
    Benchmark and mean-field BSDE solvers, transformation, measure change.
expansion
    Power expansion in the competition scale.
verification
    Monte Carlo equilibrium audits.
experiments
    Config parsing, experiment pipelines, and the command line.
"""

from .closed_form import (EquilibriumReport, PlayerSpec, equilibrium_report, him_comparison_strategy,
                          log_utility_strategy, merton_ratio, mfg_strategy, mfg_value, mfg_Y_paths,
                          mfg_Z0, nplayer_strategies)
from .errors import (BallRadiusWarning, ConfigError, DegenerateGameError, DegeneratePopulationError,
                     InvalidArgumentError, MfpgError, NumericalOverflowError, SolverDivergedError,
                     TransformationDegenerateError)
from .market import (AgentType, CoefficientMode, CoefficientModel, IndexPath, PopulationSpec,
                     ScenarioSet, StrategyField, TimeGrid, WealthPanel, build_scenarios,
                     performance_index, realized_utility, simulate_log_wealth)

__version__ = "0.1.0"

__all__ = [
    "AgentType", "BallRadiusWarning", "CoefficientMode", "CoefficientModel", "ConfigError",
    "DegenerateGameError", "DegeneratePopulationError", "EquilibriumReport", "IndexPath",
    "InvalidArgumentError", "MfpgError", "NumericalOverflowError", "PlayerSpec", "PopulationSpec",
    "ScenarioSet", "SolverDivergedError", "StrategyField", "TimeGrid",
    "TransformationDegenerateError", "WealthPanel", "build_scenarios", "equilibrium_report",
    "him_comparison_strategy", "log_utility_strategy", "merton_ratio", "mfg_strategy", "mfg_value",
    "mfg_Y_paths", "mfg_Z0", "nplayer_strategies", "performance_index", "realized_utility",
    "simulate_log_wealth",
]
