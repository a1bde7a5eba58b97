"""Prior densities for the KL coordinates, covariance hyper-parameters and noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

from ..exceptions import ConfigurationError
from ..kernels import HyperParams, UniformLengthPrior


@dataclass(frozen=True)
class Priors:
    """Independent priors of (eta, l, sigma_f2, sigma_o2).

    eta ~ N(0, I_K), l ~ U[l_min, l_max], sigma_f2 ~ InvGamma(alpha, beta)
    and the Jeffreys density 1/sigma_o2 for the noise variance.  The last one
    is improper and only makes sense inside a posterior.
    """

    K: int
    l_min: float = 0.1
    l_max: float = 1.0
    alpha: float = 3.0
    beta: float = 1.0

    jeffreys_is_proper = False

    def __post_init__(self):
        if self.K < 0:
            raise ConfigurationError("K must be non-negative")
        if not 0 < self.l_min < self.l_max:
            raise ConfigurationError("need 0 < l_min < l_max")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("inverse-Gamma parameters must be positive")

    @property
    def sigma_f2_dist(self):
        return stats.invgamma(self.alpha, scale=self.beta)

    @property
    def sigma_f2_mean(self) -> float:
        if self.alpha <= 1:
            return float("inf")
        return self.beta / (self.alpha - 1.0)

    @property
    def sigma_f2_var(self) -> float:
        if self.alpha <= 2:
            return float("inf")
        return self.beta**2 / ((self.alpha - 1.0) ** 2 * (self.alpha - 2.0))

    def hyper_prior(self) -> UniformLengthPrior:
        """The q-prior used to average the kernel (sigma_f2 enters only through its mean)."""
        return UniformLengthPrior(self.l_min, self.l_max, self.sigma_f2_mean)

    def log_l(self, l: float) -> float:
        if not self.l_min <= l <= self.l_max:
            return -np.inf
        return -np.log(self.l_max - self.l_min)

    def log_sigma_f2(self, s2: float) -> float:
        if not s2 > 0:
            return -np.inf
        a, b = self.alpha, self.beta
        # closed form of the inverse-Gamma log-density; cheaper than scipy in the chain
        return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(s2) - b / s2

    @staticmethod
    def log_sigma_o2(s2: float) -> float:
        if not s2 > 0:
            return -np.inf
        return -np.log(s2)

    @staticmethod
    def log_eta(eta: np.ndarray) -> float:
        eta = np.asarray(eta, dtype=float)
        return -0.5 * float(eta @ eta) - 0.5 * eta.size * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class PosteriorState:
    eta: np.ndarray
    q: HyperParams
    sigma_o2: float

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))

    @property
    def K(self) -> int:
        return self.eta.size


def log_prior(s: PosteriorState, p: Priors) -> float:
    """Sum of the component log-densities; -inf outside the support."""
    if s.eta.size != p.K:
        raise ConfigurationError(f"state has {s.eta.size} coordinates, prior expects {p.K}")
    parts = (p.log_l(s.q.l), p.log_sigma_f2(s.q.sigma_f2), p.log_sigma_o2(s.sigma_o2))
    if not all(np.isfinite(v) for v in parts):
        return -np.inf
    return float(sum(parts) + p.log_eta(s.eta))
