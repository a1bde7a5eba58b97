"""q-dependent change of coordinates onto a fixed reference KL basis.

For hyper-parameters q with scaled modes Phi_i(q) = sqrt(lambda_i(q)) phi_i(q),
the matrix ``B[j, i] = (phi_j^r, Phi_i(q))_X`` maps native coordinates to
reference coordinates, ``eta_hat = B @ eta``, so that
``sum_j phi_j^r eta_hat_j`` is the L2 projection of the native truncated
field onto span{phi^r}.  Dividing row j by sqrt(lambda_j^r) gives the
standardized coordinates ``xi`` that the surrogate is built on.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, SingularCovarianceError
from .kernels import CovMatrix, Grid1D, HyperParams, SquaredExponential, assemble_cov_matrix, se_matrix
from .kl import KLBasis, decompose, orient

__all__ = [
    "CoordinateTransform",
    "StretchReport",
    "projection_coeffs",
    "sigma2",
    "conditional_logdensity",
    "xi_transform",
    "stretching",
    "TransformBuilder",
]


@dataclass(frozen=True, eq=False)
class CoordinateTransform:
    B: np.ndarray
    lambda_ref: np.ndarray
    kappa: float = 0.0
    q: HyperParams | None = None

    @property
    def K(self) -> int:
        return self.B.shape[0]

    @property
    def keep(self) -> np.ndarray:
        """Rows of B-hat that survive the relative-eigenvalue threshold."""
        lam = self.lambda_ref
        if lam[0] <= 0:
            return np.zeros(len(lam), dtype=bool)
        return lam / lam[0] > self.kappa

    @property
    def K_pc(self) -> int:
        return int(np.count_nonzero(self.keep))

    @property
    def Bhat(self) -> np.ndarray:
        keep = self.keep
        out = np.zeros_like(self.B)
        out[keep] = self.B[keep] / np.sqrt(self.lambda_ref[keep])[:, None]
        return out

    def with_kappa(self, kappa: float) -> "CoordinateTransform":
        return CoordinateTransform(self.B, self.lambda_ref, kappa, self.q)


@dataclass(frozen=True)
class StretchReport:
    q: HyperParams | None
    beta_max: float

    @property
    def stretch(self) -> float:
        return float(np.sqrt(self.beta_max))


def projection_coeffs(
    basis_q: KLBasis, reference: KLBasis, kappa: float = 0.0, q: HyperParams | None = None
) -> CoordinateTransform:
    """B[j, i] = (phi_j^r, sqrt(lambda_i(q)) phi_i(q))_X.

    ``basis_q`` should already be oriented against ``reference``.
    """
    if basis_q.grid != reference.grid:
        raise DimensionError("bases live on different grids")
    if basis_q.K != reference.K:
        raise DimensionError(f"reference has {reference.K} modes, basis has {basis_q.K}")
    w = reference.grid.weights
    B = (reference.modes * w) @ basis_q.scaled_modes.T
    return CoordinateTransform(B, reference.eigvals.copy(), float(kappa), q)


def sigma2(t: CoordinateTransform) -> np.ndarray:
    """Covariance B B^t of eta_hat given q."""
    s = t.B @ t.B.T
    return 0.5 * (s + s.T)


def conditional_logdensity(eta_hat: np.ndarray, s2: np.ndarray) -> float | np.ndarray:
    """Log of the centred Gaussian density with covariance ``s2``."""
    s2 = np.asarray(s2, dtype=float)
    k = s2.shape[0]
    try:
        L = np.linalg.cholesky(s2)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("Sigma^2 is not positive definite") from exc
    piv = np.diag(L) ** 2
    if piv.min() < 1e-14 * piv.max():
        raise SingularCovarianceError(f"Sigma^2 pivot {piv.min():.3e} is numerically zero")
    eta_hat = np.asarray(eta_hat, dtype=float)
    z = np.linalg.solve(L, eta_hat.T)
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * quad - 0.5 * logdet - 0.5 * k * np.log(2.0 * np.pi)


def xi_transform(eta: np.ndarray, t: CoordinateTransform) -> np.ndarray:
    """xi = B-hat(q) eta; works on a batch of shape (S, K)."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] != t.B.shape[1]:
        raise DimensionError(f"expected {t.B.shape[1]} coordinates, got {eta.shape[-1]}")
    return eta @ t.Bhat.T


def stretching(t: CoordinateTransform) -> StretchReport:
    """Largest eigenvalue of B-hat^t B-hat."""
    s = np.linalg.svd(t.Bhat, compute_uv=False)
    return StretchReport(t.q, float(s[0] ** 2) if s.size else 0.0)


class TransformBuilder:
    """Factory producing ``CoordinateTransform`` objects for arbitrary q.

    Every distinct length-scale triggers a fresh decomposition of C(q).
    For the SE kernel the variance only rescales the spectrum, so B is
    computed at unit variance and multiplied by sqrt(sigma_f2).  A small
    LRU memo avoids redoing the decomposition for a repeated q.

    ``l_grid`` switches on an optional nearest-neighbour cache over a fixed
    set of length-scales; off by default.
    """

    def __init__(self, kernel, reference: KLBasis, kappa: float = 0.0, memo_size: int = 8, l_grid=None):
        self.kernel = kernel
        self.reference = reference
        self.kappa = float(kappa)
        self.memo_size = memo_size
        self._memo: OrderedDict = OrderedDict()
        self._se = isinstance(kernel, SquaredExponential)
        self.l_grid = None if l_grid is None else np.sort(np.asarray(l_grid, dtype=float))
        self.n_decompositions = 0

    @property
    def grid(self) -> Grid1D:
        return self.reference.grid

    def basis(self, q: HyperParams) -> KLBasis:
        """Oriented K-term basis of C(q)."""
        cov = assemble_cov_matrix(self.kernel, self.grid, q)
        self.n_decompositions += 1
        return orient(decompose(cov, self.reference.K), self.reference)

    def _unit_B(self, l: float) -> np.ndarray:
        key = ("l", l)
        if key in self._memo:
            self._memo.move_to_end(key)
            return self._memo[key]
        cov = CovMatrix(se_matrix(self.grid, l, 1.0), self.grid)
        self.n_decompositions += 1
        b = orient(decompose(cov, self.reference.K), self.reference)
        B = projection_coeffs(b, self.reference).B
        self._memo[key] = B
        if len(self._memo) > self.memo_size:
            self._memo.popitem(last=False)
        return B

    def __call__(self, q: HyperParams) -> CoordinateTransform:
        if self._se:
            l = q.l
            if self.l_grid is not None:
                l = float(self.l_grid[np.argmin(np.abs(self.l_grid - l))])
            B = np.sqrt(q.sigma_f2) * self._unit_B(l)
            return CoordinateTransform(B, self.reference.eigvals, self.kappa, q)
        return projection_coeffs(self.basis(q), self.reference, self.kappa, q)
