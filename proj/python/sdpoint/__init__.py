"""Python access to the sdpoint C++ library."""

from ._sdpoint import (
    DataError,
    Model,
    NumericalError,
    UsageError,
    adaptive_avg_pool,
    adaptive_avg_pool_backward,
    catalog_ids,
    cost_table,
    padded_pixel_ratio,
    param_count,
    pareto_filter,
    pool_windows,
    target_size,
)

__all__ = [
    "DataError",
    "Model",
    "NumericalError",
    "UsageError",
    "adaptive_avg_pool",
    "adaptive_avg_pool_backward",
    "catalog_ids",
    "cost_table",
    "padded_pixel_ratio",
    "param_count",
    "pareto_filter",
    "pool_windows",
    "target_size",
]
