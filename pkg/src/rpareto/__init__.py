"""Bayesian inference for r-Pareto processes observed on a coarse set of sites."""

from .geometry import ConfigurationError, SiteSet, build_regular_grid
from .gauss_field import NumericalError, VariogramParams, fbf_covariance, sample_fbf
from .risk import COARSE_MEAN, FINE_MEAN, RiskSpec
from .spectral import ModelParams, sample_r_pareto, sample_w, sample_w_r
from .cr_norm import CrEstimate, dynamic_n, estimate_log_cr

__version__ = "0.1.0"

__all__ = [
    "COARSE_MEAN", "ConfigurationError", "CrEstimate", "FINE_MEAN", "ModelParams",
    "NumericalError", "RiskSpec", "SiteSet", "VariogramParams", "build_regular_grid",
    "dynamic_n", "estimate_log_cr", "fbf_covariance", "sample_fbf", "sample_r_pareto",
    "sample_w", "sample_w_r",
]
