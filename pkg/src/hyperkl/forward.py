"""1D transient diffusion with log-normal diffusivity.

    dU/dt = d/dx (nu dU/dx),  x in (0, 1),  U(0, t) = -1,  U(1, t) = 1,  U(x, 0) = 0,
    nu = nu0 + exp(m).

P1 finite elements in space (consistent mass), Crank-Nicolson in time,
Dirichlet values eliminated.  Because the boundary data are constant for
t > 0, the CN recursion for the deviation from the discrete steady state is
diagonalized by the generalized eigenvectors of (K, M):

    w^n = V diag(r(mu)^n) V^T M w^0,  r(mu) = (1 - dt mu / 2) / (1 + dt mu / 2),

which reproduces step-by-step CN to round-off at any stored level.  The
explicit time-stepping path (``method="step"``) is kept for cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import ConfigurationError, DimensionError, NumericError
from .kernels import Grid1D

__all__ = ["DiffusionConfig", "Solution", "ObservationOperator", "solve", "observe", "predict", "field_on_mesh"]

BC_LEFT = -1.0
BC_RIGHT = 1.0


@dataclass(frozen=True)
class DiffusionConfig:
    """Solver discretization.

    The step count is ``T / dt`` rounded up to a multiple of ``sync`` so that
    ``sync`` equally spaced observation times fall on exact time levels.
    """

    nu0: float = 0.1
    n_elems: int = 56
    dt: float = 1e-4
    T: float = 0.05
    sync: int = 1

    def __post_init__(self):
        if not self.nu0 > 0:
            raise ConfigurationError("nu0 must be positive")
        if self.n_elems < 2:
            raise ConfigurationError("need at least two elements")
        if not (self.dt > 0 and self.T > 0):
            raise ConfigurationError("dt and T must be positive")
        if self.sync < 1:
            raise ConfigurationError("sync must be >= 1")

    @property
    def n_steps(self) -> int:
        blocks = math.ceil(self.T / (self.dt * self.sync) - 1e-9)
        return max(blocks, 1) * self.sync

    @property
    def dt_eff(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_elems + 1)

    @property
    def h(self) -> float:
        return 1.0 / self.n_elems

    def fingerprint(self) -> dict:
        return {"nu0": self.nu0, "n_elems": self.n_elems, "n_steps": self.n_steps, "T": self.T}


@dataclass(frozen=True, eq=False)
class Solution:
    """Nodal values at stored levels: ``values[i, j] = U(x_j, times[i])``."""

    x: np.ndarray
    times: np.ndarray
    steps: np.ndarray
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class ObservationOperator:
    """Space-time observation layout, flattened time-major then space."""

    x: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if np.any((x <= 0) | (x >= 1)):
            raise ConfigurationError("observation locations must be strictly inside (0, 1)")
        if np.any(t <= 0):
            raise ConfigurationError("observation times must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, n_x: int = 19, n_t: int = 13, T: float = 0.05) -> "ObservationOperator":
        """``n_x`` interior points i/(n_x+1) and ``n_t`` times jT/n_t, j = 1..n_t."""
        x = np.arange(1, n_x + 1) / (n_x + 1)
        t = T * np.arange(1, n_t + 1) / n_t
        return cls(x, t)

    @property
    def n_obs(self) -> int:
        return len(self.x) * len(self.t)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, t) of every observation in the flattened order."""
        tt, xx = np.meshgrid(self.t, self.x, indexing="ij")
        return xx.ravel(), tt.ravel()


def field_on_mesh(m, n_elems: int) -> np.ndarray:
    """Element-wise field values from a cell array or a callable m(x)."""
    mid = (np.arange(n_elems) + 0.5) / n_elems
    if callable(m):
        return np.asarray(m(mid), dtype=float)
    m = np.asarray(m, dtype=float)
    if m.ndim != 1:
        raise DimensionError("field must be one-dimensional")
    if m.size == n_elems:
        return m
    return m[Grid1D(m.size).cell_index(mid)]


def _assemble(nu: np.ndarray, h: float):
    """Interior blocks of P1 stiffness and mass, plus the Dirichlet load."""
    n = nu.size
    ni = n - 1
    kd = (nu[:-1] + nu[1:]) / h
    ko = -nu[1:-1] / h
    K = np.diag(kd) + np.diag(ko, 1) + np.diag(ko, -1)
    M = np.diag(np.full(ni, 4.0 * h / 6.0)) + np.diag(np.full(ni - 1, h / 6.0), 1) + np.diag(np.full(ni - 1, h / 6.0), -1)
    load = np.zeros(ni)
    load[0] = nu[0] / h * BC_LEFT
    load[-1] = nu[-1] / h * BC_RIGHT
    return K, M, load


def _store_steps(cfg: DiffusionConfig, times) -> np.ndarray:
    if times is None:
        return np.arange(cfg.n_steps + 1)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    steps = np.rint(t / cfg.dt_eff).astype(int)
    if np.any(np.abs(steps * cfg.dt_eff - t) > 1e-9 * cfg.T) or np.any(steps < 0) or np.any(steps > cfg.n_steps):
        raise ConfigurationError("requested times are not solver time levels")
    return steps


def solve(m, cfg: DiffusionConfig, times=None, method: str = "modal") -> Solution:
    """Solve the diffusion problem for log-diffusivity ``m``.

    Parameters
    ----------
    m : array of cell values (any cell count) or callable of x
    cfg : DiffusionConfig
    times : optional iterable of time levels to store (default: all)
    method : ``"modal"`` (default) or ``"step"``
    """
    me = field_on_mesh(m, cfg.n_elems)
    if not np.all(np.isfinite(me)):
        raise NumericError("non-finite log-diffusivity")
    nu = cfg.nu0 + np.exp(me)
    if not np.all(np.isfinite(nu)):
        raise NumericError("diffusivity overflow")
    K, M, load = _assemble(nu, cfg.h)
    steps = _store_steps(cfg, times)
    dt = cfg.dt_eff
    u_ss = np.linalg.solve(K, load)

    if method == "modal":
        mu, V = sla.eigh(K, M)
        r = (1.0 - 0.5 * dt * mu) / (1.0 + 0.5 * dt * mu)
        c0 = V.T @ (M @ (-u_ss))
        interior = u_ss[None, :] + (r[None, :] ** steps[:, None] * c0[None, :]) @ V.T
        # level 0 is the initial condition, not the modal limit
        interior[steps == 0] = 0.0
    elif method == "step":
        A = M + 0.5 * dt * K
        Bm = M - 0.5 * dt * K
        lu = sla.lu_factor(A)
        rhs_const = dt * load
        u = np.zeros(K.shape[0])
        want = {int(s): i for i, s in enumerate(steps)}
        interior = np.zeros((len(steps), K.shape[0]))
        for n in range(cfg.n_steps + 1):
            if n in want:
                interior[want[n]] = u
            if n == cfg.n_steps:
                break
            u = sla.lu_solve(lu, Bm @ u + rhs_const)
    else:
        raise ConfigurationError(f"unknown solver method {method!r}")

    values = np.empty((len(steps), cfg.n_elems + 1))
    values[:, 0] = BC_LEFT
    values[:, -1] = BC_RIGHT
    values[:, 1:-1] = interior
    return Solution(cfg.nodes, steps * dt, steps, values)


def observe(sol: Solution, op: ObservationOperator) -> np.ndarray:
    """Linear interpolation of the P1 solution at every (x_i, t_i)."""
    T = sol.times[-1] if sol.times.size else 1.0
    out = np.empty((len(op.t), len(op.x)))
    for i, t in enumerate(op.t):
        hit = np.flatnonzero(np.abs(sol.times - t) <= 1e-9 * max(T, 1.0))
        if hit.size == 0:
            raise ConfigurationError(f"observation time {t} is not a stored level")
        out[i] = np.interp(op.x, sol.x, sol.values[hit[0]])
    return out.ravel()


def predict(m, cfg: DiffusionConfig, op: ObservationOperator) -> np.ndarray:
    """Solve at the observation times only and return the prediction vector."""
    return observe(solve(m, cfg, times=op.t), op)
