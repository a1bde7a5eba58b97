"""Gaussian likelihood with the PC surrogate standing in for the forward model."""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError, DimensionError, NumericError
from ..pce import PCSurrogate, eval_surrogate
from ..transform import TransformBuilder, xi_transform
from .priors import PosteriorState, Priors, log_prior


def gaussian_loglik(residual: np.ndarray, sigma_o2: float) -> float:
    """sum_i -1/2 log(2 pi sigma_o2) - r_i^2 / (2 sigma_o2)."""
    r = np.asarray(residual, dtype=float)
    return float(-0.5 * r.size * np.log(2.0 * np.pi * sigma_o2) - 0.5 * (r @ r) / sigma_o2)


def surrogate_prediction(s: PosteriorState, surrogate: PCSurrogate, t_builder: TransformBuilder) -> np.ndarray:
    """u~(xi) with xi = B-hat(q) eta truncated to the surrogate's active coordinates."""
    t = t_builder(s.q)
    xi = xi_transform(s.eta, t)
    return eval_surrogate(surrogate, xi[: surrogate.N])


def log_likelihood(d: np.ndarray, s: PosteriorState, surrogate: PCSurrogate | None, t_builder: TransformBuilder) -> float:
    """Surrogate log-likelihood of the data vector ``d``.

    A failure while building the coordinate transform at ``s.q`` is treated
    as zero likelihood so that the proposal is rejected.
    """
    d = np.asarray(d, dtype=float)
    if not s.sigma_o2 > 0:
        raise ConfigurationError("sigma_o2 must be positive")
    if d.size == 0:
        return 0.0
    if surrogate is None:
        raise ConfigurationError("a surrogate is required for a non-empty data vector")
    if surrogate.n_out != d.size:
        raise DimensionError(f"surrogate predicts {surrogate.n_out} values, data has {d.size}")
    try:
        u = surrogate_prediction(s, surrogate, t_builder)
    except NumericError:
        return -np.inf
    return gaussian_loglik(d - u, s.sigma_o2)


class LogPosterior:
    """Callable state -> log_likelihood + log_prior, with no other terms."""

    def __init__(self, d, priors: Priors, surrogate: PCSurrogate | None, t_builder: TransformBuilder):
        self.d = np.asarray(d, dtype=float)
        self.priors = priors
        self.surrogate = surrogate
        self.t_builder = t_builder
        self.n_evals = 0

    def log_prior(self, s: PosteriorState) -> float:
        return log_prior(s, self.priors)

    def log_likelihood(self, s: PosteriorState) -> float:
        return log_likelihood(self.d, s, self.surrogate, self.t_builder)

    def __call__(self, s: PosteriorState) -> float:
        self.n_evals += 1
        lp = self.log_prior(s)
        if not np.isfinite(lp):
            return -np.inf
        return lp + self.log_likelihood(s)
