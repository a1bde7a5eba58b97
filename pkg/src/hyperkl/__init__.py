"""Gaussian-process priors with hyper-parameters for surrogate-based Bayesian inversion.

The subpackages cover the chain from a parametrized covariance kernel to
posterior samples: Karhunen-Loeve bases (``kl``), the q-dependent change of
coordinates onto a reference basis (``transform``), a 1D diffusion forward
model (``forward``), polynomial chaos surrogates (``pce``), Monte-Carlo error
estimators (``mc_error``), adaptive Metropolis inference (``inference``),
synthetic data (``data``) and a command-line driver (``cli``).
"""

__version__ = "0.1.0"
