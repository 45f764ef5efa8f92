from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .results import Curves, IncompatibleTables, ResultRow, ResultTable, summarize
from .runner import cache_optimum, fetch_data, run_experiment, run_gridsearch

__all__ = [
    "ConfigError", "Curves", "ExperimentConfig", "IncompatibleTables", "ResultRow",
    "ResultTable", "cache_optimum", "config_from_dict", "fetch_data", "load_config",
    "run_experiment", "run_gridsearch", "summarize",
]
