"""Parametrized covariance functions and their assembly on a 1D grid.

Kernels are evaluated at cell midpoints of a uniform partition of [0, 1],
which is the piecewise-constant Galerkin discretization used by
:mod:`hyperkl.kl`.  The q-averaged kernel is stored as a tabulated matrix
on the working grid so that eigen-solves never re-integrate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, DimensionError, InvalidHyperParameterError

__all__ = [
    "HyperParams",
    "Grid1D",
    "CovMatrix",
    "SquaredExponential",
    "CompositeKernel",
    "TabulatedKernel",
    "PointMassPrior",
    "UniformLengthPrior",
    "MixturePrior",
    "eval_kernel",
    "assemble_cov_matrix",
    "average_kernel",
]


@dataclass(frozen=True)
class HyperParams:
    """Covariance hyper-parameters: correlation length and process variance."""

    l: float
    sigma_f2: float

    def __post_init__(self):
        if not (np.isfinite(self.l) and self.l > 0):
            raise InvalidHyperParameterError(f"length-scale must be > 0, got {self.l}")
        if not (np.isfinite(self.sigma_f2) and self.sigma_f2 > 0):
            raise InvalidHyperParameterError(f"sigma_f2 must be > 0, got {self.sigma_f2}")


@dataclass(frozen=True)
class Grid1D:
    """Uniform partition of D = [0, 1] into ``n`` cells."""

    n: int

    def __post_init__(self):
        if int(self.n) < 1:
            raise DimensionError(f"grid needs at least one cell, got {self.n}")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def cell_index(self, x) -> np.ndarray:
        """Index of the cell containing ``x`` (right edge belongs to last cell)."""
        idx = np.floor(np.asarray(x, dtype=float) * self.n).astype(int)
        return np.clip(idx, 0, self.n - 1)

    def inner(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """L2(D) inner product of piecewise-constant functions (last axis)."""
        return np.tensordot(u * self.weights, v, axes=([-1], [-1]))


@dataclass(frozen=True)
class CovMatrix:
    matrix: np.ndarray
    grid: Grid1D


@dataclass(frozen=True)
class SquaredExponential:
    r"""``sigma_f2 * exp(-(x - x')^2 / (2 l^2))``."""

    def __call__(self, x, xp, q: HyperParams) -> np.ndarray:
        d = np.subtract(x, xp)
        return q.sigma_f2 * np.exp(-0.5 * (d / q.l) ** 2)


@dataclass(frozen=True)
class CompositeKernel:
    """SE term plus linear, bias and nugget terms.

    Experimental: none of the shipped experiments use the extra terms and
    there is no default prior for their coefficients.  ``use_se=False``
    drops the SE term so the remaining terms can be used on their own.
    """

    sigma_d2: float = 0.0
    sigma_b2: float = 0.0
    sigma_n2: float = 0.0
    use_se: bool = True

    def __post_init__(self):
        for name in ("sigma_d2", "sigma_b2", "sigma_n2"):
            if getattr(self, name) < 0:
                raise InvalidHyperParameterError(f"{name} must be >= 0")

    def __call__(self, x, xp, q: HyperParams) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        out = self.sigma_d2 * x * xp + self.sigma_b2 + self.sigma_n2 * (x == xp)
        if self.use_se:
            out = out + SquaredExponential()(x, xp, q)
        return np.asarray(out, dtype=float)


@dataclass(frozen=True, eq=False)
class TabulatedKernel:
    """Kernel stored as its matrix on a grid (e.g. the q-average).

    ``base``, ``nodes`` and ``weights`` record the quadrature rule that
    produced the matrix; point evaluation off the grid re-applies the rule.
    """

    matrix: np.ndarray
    grid: Grid1D
    base: object = None
    nodes: tuple = field(default=())
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __call__(self, x, xp, q: HyperParams | None = None) -> np.ndarray:
        if self.base is None:
            return self.matrix[self.grid.cell_index(x), self.grid.cell_index(xp)]
        return sum(w * self.base(x, xp, qi) for w, qi in zip(self.weights, self.nodes))


def _check_q(q):
    if not isinstance(q, HyperParams):
        raise InvalidHyperParameterError(f"expected HyperParams, got {type(q).__name__}")


def eval_kernel(kernel, x, xp, q: HyperParams | None) -> np.ndarray | float:
    """Evaluate ``kernel`` at ``(x, x')``; broadcasts over array inputs."""
    if not isinstance(kernel, TabulatedKernel):
        _check_q(q)
    out = kernel(x, xp, q)
    return float(out) if np.ndim(out) == 0 else out


def se_matrix(grid: Grid1D, l: float, sigma_f2: float = 1.0) -> np.ndarray:
    """Fast SE assembly at cell midpoints (no validation)."""
    x = grid.midpoints
    d = x[:, None] - x[None, :]
    return sigma_f2 * np.exp(-0.5 * (d / l) ** 2)


def assemble_cov_matrix(kernel, grid: Grid1D, q: HyperParams | None) -> CovMatrix:
    """Kernel values at all pairs of cell midpoints."""
    if isinstance(kernel, TabulatedKernel):
        if kernel.grid != grid:
            raise DimensionError("tabulated kernel lives on a different grid")
        return CovMatrix(kernel.matrix.copy(), grid)
    _check_q(q)
    if isinstance(kernel, SquaredExponential):
        return CovMatrix(se_matrix(grid, q.l, q.sigma_f2), grid)
    x = grid.midpoints
    mat = kernel(x[:, None], x[None, :], q)
    return CovMatrix(0.5 * (mat + mat.T), grid)


# ---------------------------------------------------------------------------
# hyper-parameter priors seen as quadrature rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMassPrior:
    q: HyperParams

    def quadrature(self, n_nodes: int = 1) -> list[tuple[float, HyperParams]]:
        return [(1.0, self.q)]

    def sample(self, rng: np.random.Generator, size: int) -> list[HyperParams]:
        return [self.q] * size


@dataclass(frozen=True)
class UniformLengthPrior:
    """Uniform ``l`` on ``[l_min, l_max]``, independent of ``sigma_f2``.

    Only the mean of ``sigma_f2`` matters for averaging, since every
    supported kernel is affine in ``sigma_f2``.
    """

    l_min: float = 0.1
    l_max: float = 1.0
    sigma_f2_mean: float = 0.5

    def __post_init__(self):
        if not 0 < self.l_min < self.l_max:
            raise InvalidHyperParameterError("need 0 < l_min < l_max")
        if self.sigma_f2_mean <= 0:
            raise InvalidHyperParameterError("sigma_f2 mean must be positive")

    def quadrature(self, n_nodes: int = 64) -> list[tuple[float, HyperParams]]:
        t, w = np.polynomial.legendre.leggauss(n_nodes)
        ls = 0.5 * (self.l_max - self.l_min) * (t + 1.0) + self.l_min
        return [(0.5 * wi, HyperParams(float(li), self.sigma_f2_mean)) for li, wi in zip(ls, w)]

    def sample(self, rng: np.random.Generator, size: int) -> list[HyperParams]:
        """Draw ``l`` uniformly; ``sigma_f2`` is held at its mean."""
        ls = rng.uniform(self.l_min, self.l_max, size)
        return [HyperParams(float(li), self.sigma_f2_mean) for li in ls]


@dataclass(frozen=True)
class MixturePrior:
    members: Sequence[tuple[float, object]]

    def quadrature(self, n_nodes: int = 64) -> list[tuple[float, HyperParams]]:
        total = sum(p for p, _ in self.members)
        rule = []
        for p, member in self.members:
            rule += [(p / total * w, q) for w, q in member.quadrature(n_nodes)]
        return rule


def average_kernel(kernel, prior, grid: Grid1D, n_nodes: int = 64) -> TabulatedKernel:
    """Tabulate the prior average of ``kernel`` over the hyper-parameters."""
    if n_nodes < 1:
        raise ConfigurationError("quadrature needs at least one node")
    rule = prior.quadrature(n_nodes)
    if not rule:
        raise ConfigurationError("empty quadrature rule")
    mat = np.zeros((grid.n, grid.n))
    for w, q in rule:
        mat += w * assemble_cov_matrix(kernel, grid, q).matrix
    weights = np.array([w for w, _ in rule])
    return TabulatedKernel(0.5 * (mat + mat.T), grid, kernel, tuple(q for _, q in rule), weights)
