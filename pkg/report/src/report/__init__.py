"""Post-hoc figures from solver benchmark metrics files."""

from .metrics_io import MetricsSchemaError, Run, parse_metrics
from .plots import convergence_series, relative_time_points, render, scaling_series

__all__ = [
    "MetricsSchemaError",
    "Run",
    "parse_metrics",
    "convergence_series",
    "relative_time_points",
    "scaling_series",
    "render",
]
