"""Bayesian inference of the log-diffusivity with a PC surrogate."""

from .diagnostics import (
    Density,
    ProfileBundle,
    field_posterior_stats,
    kde,
    kld,
    kld_between_samples,
    kld_threshold,
    kld_to_logpdf,
    kld_to_standard_normal,
)
from .likelihood import LogPosterior, gaussian_loglik, log_likelihood, surrogate_prediction
from .mcmc import AdaptationConfig, Chain, mcmc_sample
from .priors import PosteriorState, Priors, log_prior

__all__ = [
    "AdaptationConfig",
    "Chain",
    "Density",
    "LogPosterior",
    "PosteriorState",
    "Priors",
    "ProfileBundle",
    "field_posterior_stats",
    "gaussian_loglik",
    "kde",
    "kld",
    "kld_between_samples",
    "kld_threshold",
    "kld_to_logpdf",
    "kld_to_standard_normal",
    "log_likelihood",
    "log_prior",
    "mcmc_sample",
    "surrogate_prediction",
]
