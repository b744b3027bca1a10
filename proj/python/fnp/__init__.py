"""Arbitrary-resolution data assimilation on latitude/longitude grids."""

from ._fnp import (
    Checkpoint,
    ConfigError,
    Error,
    FormatError,
    NumericError,
    analytic_analysis,
    gaussian_nll,
    latitude_weighted_rmse,
    normalize_config,
    run_experiment,
    sample_observations,
    select_merge,
    selection_mask,
    similarity,
    var_cost,
    var_gradient,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Error",
    "FormatError",
    "NumericError",
    "analytic_analysis",
    "gaussian_nll",
    "latitude_weighted_rmse",
    "normalize_config",
    "run_experiment",
    "sample_observations",
    "select_merge",
    "selection_mask",
    "similarity",
    "var_cost",
    "var_gradient",
]
