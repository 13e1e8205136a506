"""Sparse nonnegative spike-train deconvolution with a Bernoulli-generalized
hyperbolic prior, a truncated-Gaussian baseline sampler and multivariate
convergence diagnostics."""

from .diagnostics import convergence_iteration, mpsrf, mpsrf_trace, posterior_mean
from .distributions import (
    FittedGhApprox,
    GhParams,
    GigParams,
    fit_gh_to_truncated_normal,
    gh_log_pdf,
    gig_log_pdf,
    gig_sample,
    load_default_fit,
)
from .model import Hyperparams, LatentState, Observation, build_dictionary, impulse_response, log_marginal
from .samplers import SamplerConfig, initial_state, run_chain
from .simulation import Scenario, generate_scenario, reconstruction_metrics

__version__ = "0.1.0"

__all__ = [
    "FittedGhApprox",
    "GhParams",
    "GigParams",
    "Hyperparams",
    "LatentState",
    "Observation",
    "SamplerConfig",
    "Scenario",
    "build_dictionary",
    "convergence_iteration",
    "fit_gh_to_truncated_normal",
    "generate_scenario",
    "gh_log_pdf",
    "gig_log_pdf",
    "gig_sample",
    "impulse_response",
    "initial_state",
    "load_default_fit",
    "log_marginal",
    "mpsrf",
    "mpsrf_trace",
    "posterior_mean",
    "reconstruction_metrics",
    "run_chain",
]
