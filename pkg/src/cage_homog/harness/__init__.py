"""Study orchestration, reports, invariant checks and the command-line entry point."""
from .config import ConfigError, StudyConfig, StudyKind, from_dict, load_config
from .reports import ConvergenceTable, fit_loglog
from .studies import (run_cell, run_constants, run_converge_delta, run_limit, run_regularize_theta,
                      run_shielding, run_solve)
from .checks import run_check_ops

__all__ = [
    "ConfigError", "StudyConfig", "StudyKind", "from_dict", "load_config", "ConvergenceTable", "fit_loglog",
    "run_cell", "run_constants", "run_converge_delta", "run_limit", "run_regularize_theta", "run_shielding",
    "run_solve", "run_check_ops",
]
