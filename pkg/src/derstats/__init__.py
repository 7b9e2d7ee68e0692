"""Representation-aware A/B test analysis: DER statistics, Bonferroni alerting,
honest causal trees and a log-normal mixture simulation lab."""

from .core_stats import (
    DerDelta,
    DerEstimate,
    GroupSummary,
    Moments,
    RelativeLift,
    RepresentationReport,
    der_delta,
    der_gradient,
    der_statistic,
    der_variance_k2,
    group_summaries,
    relative_lift,
    representation_report,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DerDelta",
    "DerEstimate",
    "GroupSummary",
    "Moments",
    "RelativeLift",
    "RepresentationReport",
    "der_delta",
    "der_gradient",
    "der_statistic",
    "der_variance_k2",
    "group_summaries",
    "relative_lift",
    "representation_report",
]
