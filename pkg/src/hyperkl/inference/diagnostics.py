"""Posterior summaries: marginal KDEs, KL divergences and field profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy import stats

from ..exceptions import ConfigurationError, DegenerateSampleError, SupportViolationError
from ..kl import KLBasis, reconstruct_in_reference
from ..transform import TransformBuilder
from .mcmc import Chain

__all__ = [
    "Density",
    "kde",
    "kld",
    "kld_to_logpdf",
    "kld_to_standard_normal",
    "kld_between_samples",
    "kld_threshold",
    "ProfileBundle",
    "field_posterior_stats",
]

KDE_POINTS = 512


@dataclass(frozen=True, eq=False)
class Density:
    x: np.ndarray
    p: np.ndarray
    bandwidth: float = float("nan")

    @property
    def mode(self) -> float:
        return float(self.x[np.argmax(self.p)])

    def integral(self) -> float:
        return float(trapezoid(self.p, self.x))


def kde(samples, bandwidth: str | float = "silverman", grid: np.ndarray | None = None, n_points: int = KDE_POINTS) -> Density:
    """Gaussian kernel density estimate.

    The default grid has ``n_points`` nodes spanning the sample range
    extended by three bandwidths on each side.  ``bandwidth`` is either a
    rule understood by :class:`scipy.stats.gaussian_kde` or an absolute
    kernel standard deviation.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSampleError("KDE needs at least two samples")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise DegenerateSampleError("samples are constant")
    if isinstance(bandwidth, str):
        est = stats.gaussian_kde(x, bw_method=bandwidth)
    else:
        est = stats.gaussian_kde(x, bw_method=float(bandwidth) / sd)
    h = float(np.sqrt(est.covariance[0, 0]))
    if grid is None:
        grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_points)
    return Density(np.asarray(grid, dtype=float), est(grid), h)


def kld(p, q, x=None, tol: float = 0.0) -> float:
    """Trapezoid-rule integral of p ln(p/q) on a shared grid.

    ``p`` and ``q`` may be :class:`Density` objects or arrays (then ``x`` is
    required).  Points with p = 0 contribute nothing; p > tol where q <= tol
    raises :class:`SupportViolationError`.
    """
    if isinstance(p, Density):
        x = p.x if x is None else x
        p = p.p
    if isinstance(q, Density):
        if x is not None and not np.array_equal(q.x, x):
            raise ConfigurationError("densities live on different grids")
        q = q.p
    if x is None:
        raise ConfigurationError("an evaluation grid is required")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((p > tol) & (q <= tol)):
        raise SupportViolationError("p has mass where q vanishes")
    f = np.zeros_like(p)
    pos = p > 0
    f[pos] = p[pos] * np.log(p[pos] / q[pos])
    return float(trapezoid(f, x))


def kld_to_logpdf(d: Density, logpdf, lo: float = -np.inf, hi: float = np.inf) -> float:
    """KLD from a KDE to a prior given by its log-density.

    Working with log q avoids underflow of q in the far tails (the
    inverse-Gamma density, for instance, is exactly 0.0 in floating point
    just above zero).  The integral is restricted to ``lo < x < hi``, the
    prior support, so kernel mass leaking past a hard bound is dropped.
    """
    inside = (d.x > lo) & (d.x < hi)
    x, p = d.x[inside], d.p[inside]
    with np.errstate(divide="ignore"):
        logq = np.asarray(logpdf(x), dtype=float)
    pos = p > 0
    if np.any(pos & ~np.isfinite(logq)):
        raise SupportViolationError("p has mass where q vanishes")
    f = np.zeros_like(p)
    f[pos] = p[pos] * (np.log(p[pos]) - logq[pos])
    return float(trapezoid(f, x))


def kld_to_standard_normal(samples) -> float:
    """KLD from the KDE of ``samples`` to the N(0, 1) prior."""
    return kld_to_logpdf(kde(samples), stats.norm.logpdf)


def kld_between_samples(a, b, n_points: int = KDE_POINTS) -> float:
    """KLD between the KDEs of two samples on a grid covering both."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = max(kde(a, n_points=2).bandwidth, kde(b, n_points=2).bandwidth)
    lo = min(a.min(), b.min()) - 3 * h
    hi = max(a.max(), b.max()) + 3 * h
    grid = np.linspace(lo, hi, n_points)
    return kld(kde(a, grid=grid), kde(b, grid=grid))


def kld_threshold(n: int, n_boot: int = 200, level: float = 0.95, seed: int = 0) -> float:
    """Chance level of the KLD between two KDEs of n standard-normal draws each.

    Returns the ``level`` quantile over ``n_boot`` independent pairs.  A
    marginal posterior whose KLD to its prior stays below this value is
    indistinguishable from the prior at that sample size.
    """
    rng = np.random.default_rng(seed)
    vals = [kld_between_samples(rng.standard_normal(n), rng.standard_normal(n)) for _ in range(n_boot)]
    return float(np.quantile(vals, level))


@dataclass(frozen=True, eq=False)
class ProfileBundle:
    x: np.ndarray
    median: np.ndarray
    mean: np.ndarray
    quantiles: dict
    map: np.ndarray
    n_states: int

    def as_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "median": self.median.tolist(),
            "mean": self.mean.tolist(),
            "quantiles": {str(k): v.tolist() for k, v in self.quantiles.items()},
            "map": self.map.tolist(),
            "n_states": self.n_states,
        }


def _profiles(chain: Chain, reference: KLBasis, builder: TransformBuilder | None) -> np.ndarray:
    if builder is None:
        # q is fixed at the reference: eta_hat = sqrt(lambda^r) eta
        eta_hat = chain.eta * np.sqrt(reference.eigvals)
        return reconstruct_in_reference(eta_hat, reference)
    out = np.empty((len(chain), reference.grid.n))
    for i in range(len(chain)):
        t = builder(chain.state(i).q)
        out[i] = reconstruct_in_reference(t.B @ chain.eta[i], reference)
    return out


def field_posterior_stats(
    chain: Chain,
    reference: KLBasis,
    builder: TransformBuilder | None = None,
    quantiles=(0.05, 0.95),
    burn_in: float = 0.2,
    thin: int = 1,
) -> ProfileBundle:
    """Pointwise statistics of m(x) = sum_j phi_j^r (B(q) eta)_j over the retained states.

    The MAP profile is that of the stored state with the highest
    log-posterior in the whole chain.
    """
    kept = chain.burn(burn_in, thin)
    if len(kept) == 0:
        raise ConfigurationError("no states left after burn-in")
    M = _profiles(kept, reference, builder)
    i_map = chain.map_index()
    m_map = _profiles(chain.take([i_map]), reference, builder)[0]
    qs = {float(q): np.quantile(M, q, axis=0) for q in quantiles}
    return ProfileBundle(reference.grid.midpoints, np.median(M, axis=0), M.mean(axis=0), qs, m_map, len(kept))
