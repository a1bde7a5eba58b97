"""Discrete Karhunen-Loeve decomposition on a piecewise-constant grid.

Modes are normalized in L2(D): with cell weights ``w`` the Galerkin
eigenproblem ``C W phi = lambda phi`` is symmetrized as
``W^1/2 C W^1/2 v = lambda v`` and unscaled by ``phi = W^-1/2 v``.
Fields are zero-mean throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DegenerateModeError, DimensionError, NumericError
from .kernels import CovMatrix, Grid1D, HyperParams, assemble_cov_matrix

__all__ = [
    "KLBasis",
    "decompose",
    "decompose_kernel",
    "orient",
    "reconstruct",
    "project",
    "reconstruct_in_reference",
]

NEG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class KLBasis:
    """Leading eigen-pairs of a covariance operator.

    Attributes
    ----------
    grid : Grid1D
    eigvals : (K,) array, descending, non-negative
    modes : (K, N) array; row k is phi_k sampled on the cells
    full_trace : float
        Sum of the complete discrete spectrum (the Mercer trace).
    """

    grid: Grid1D
    eigvals: np.ndarray
    modes: np.ndarray
    full_trace: float

    @property
    def K(self) -> int:
        return len(self.eigvals)

    @property
    def scaled_modes(self) -> np.ndarray:
        """sqrt(lambda_k) * phi_k, shape (K, N)."""
        return np.sqrt(self.eigvals)[:, None] * self.modes

    def truncate(self, K: int) -> "KLBasis":
        if not 0 <= K <= self.K:
            raise DimensionError(f"cannot truncate {self.K} modes to {K}")
        return replace(self, eigvals=self.eigvals[:K], modes=self.modes[:K])


def decompose(cov: CovMatrix, K: int) -> KLBasis:
    """Solve the measure-weighted eigenproblem and keep the ``K`` largest pairs."""
    grid = cov.grid
    n = grid.n
    if not 1 <= K <= n:
        raise DimensionError(f"K must lie in [1, {n}], got {K}")
    c = np.asarray(cov.matrix, dtype=float)
    if c.shape != (n, n):
        raise DimensionError(f"covariance shape {c.shape} does not match grid of {n} cells")
    sw = np.sqrt(grid.weights)
    s = sw[:, None] * c * sw[None, :]
    s = 0.5 * (s + s.T)
    vals, vecs = np.linalg.eigh(s)
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    top = vals[0]
    if top < 0 or vals[-1] < -NEG_TOL * max(abs(top), np.finfo(float).tiny):
        raise NumericError(f"covariance is indefinite: min eigenvalue {vals[-1]:.3e}, max {top:.3e}")
    vals = np.clip(vals, 0.0, None)
    modes = (vecs[:, :K] / sw[:, None]).T
    return KLBasis(grid, vals[:K].copy(), np.ascontiguousarray(modes), float(np.trace(s)))


def decompose_kernel(kernel, grid: Grid1D, q: HyperParams | None, K: int) -> KLBasis:
    return decompose(assemble_cov_matrix(kernel, grid, q), K)


def orient(basis: KLBasis, reference: KLBasis) -> KLBasis:
    """Flip modes so that (phi_k, phi_k^r)_X >= 0.

    Exact zeros are left alone.  Modes beyond the reference size are
    returned untouched.
    """
    if basis.grid != reference.grid:
        raise DimensionError("bases live on different grids")
    k = min(basis.K, reference.K)
    dots = np.einsum("kn,kn->k", basis.modes[:k] * basis.grid.weights, reference.modes[:k])
    signs = np.ones(basis.K)
    signs[:k] = np.where(dots < 0, -1.0, 1.0)
    return replace(basis, modes=basis.modes * signs[:, None])


def reconstruct(basis: KLBasis, eta: np.ndarray) -> np.ndarray:
    """m = sum_k sqrt(lambda_k) phi_k eta_k; accepts a batch of shape (S, K)."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] != basis.K:
        raise DimensionError(f"expected {basis.K} coordinates, got {eta.shape[-1]}")
    return eta @ basis.scaled_modes


def project(field: np.ndarray, basis: KLBasis) -> np.ndarray:
    """Unit-variance coordinates eta_k = (m, phi_k)_X / sqrt(lambda_k).

    Eigenvalues at round-off level relative to the trace count as zero.
    """
    floor = basis.grid.n * np.finfo(float).eps * max(basis.full_trace, np.finfo(float).tiny)
    if np.any(basis.eigvals <= floor):
        raise DegenerateModeError("retained set contains a zero eigenvalue")
    field = np.asarray(field, dtype=float)
    if field.shape[-1] != basis.grid.n:
        raise DimensionError("field does not match the basis grid")
    return basis.grid.inner(field, basis.modes) / np.sqrt(basis.eigvals)


def reconstruct_in_reference(eta_hat: np.ndarray, reference: KLBasis) -> np.ndarray:
    """m_hat = sum_k phi_k^r eta_hat_k (the scaling lives in eta_hat)."""
    eta_hat = np.asarray(eta_hat, dtype=float)
    if eta_hat.shape[-1] != reference.K:
        raise DimensionError(f"expected {reference.K} coordinates, got {eta_hat.shape[-1]}")
    return eta_hat @ reference.modes
