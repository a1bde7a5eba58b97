"""Adaptive random-walk Metropolis over (eta, l, sigma_f2, sigma_o2).

The walk runs on the unconstrained vector

    theta = (eta_1, ..., eta_K, l, log sigma_f2, log sigma_o2),

so the target density in theta carries the Jacobian sigma_f2 * sigma_o2.
After ``adapt_start`` steps the Gaussian proposal covariance becomes the
running empirical covariance of the chain, scaled by 2.38^2 / d and
regularized by ``eps * I`` (Haario, Saksman and Tamminen, 2001).  Components
listed in ``pinned`` never move; pinning l and sigma_f2 gives the
fixed-covariance sampler.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..exceptions import ConfigurationError, InitializationError, InvalidHyperParameterError
from ..kernels import HyperParams
from .priors import PosteriorState

__all__ = ["AdaptationConfig", "Chain", "mcmc_sample", "state_to_theta", "theta_to_state"]

HYPER_NAMES = ("l", "sigma_f2", "sigma_o2")


@dataclass(frozen=True)
class AdaptationConfig:
    """Settings of the adaptive Metropolis sampler.

    Parameters
    ----------
    adapt_start : steps run with the fixed initial proposal
    eps : diagonal regularization added to the empirical covariance
    scale : covariance multiplier, default 2.38^2 / d with d the free dimension
    init_scale : standard deviation(s) of the initial diagonal proposal, scalar
        or one value per theta component
    pinned : names among {"l", "sigma_f2", "sigma_o2"} held at their initial value
    snapshot_every : proposal covariances are recorded every this many steps
    """

    adapt_start: int = 2000
    eps: float = 1e-8
    scale: float | None = None
    init_scale: float | tuple = 0.05
    pinned: tuple = ()
    snapshot_every: int = 5000

    def __post_init__(self):
        if self.adapt_start < 1:
            raise ConfigurationError("adapt_start must be >= 1")
        if self.eps < 0:
            raise ConfigurationError("eps must be non-negative")
        bad = set(self.pinned) - set(HYPER_NAMES)
        if bad:
            raise ConfigurationError(f"cannot pin {sorted(bad)}")


def state_to_theta(s: PosteriorState) -> np.ndarray:
    return np.concatenate([s.eta, [s.q.l, np.log(s.q.sigma_f2), np.log(s.sigma_o2)]])


def theta_to_state(theta: np.ndarray) -> PosteriorState:
    K = theta.size - 3
    return PosteriorState(theta[:K].copy(), HyperParams(float(theta[K]), float(np.exp(theta[K + 1]))), float(np.exp(theta[K + 2])))


@dataclass(eq=False)
class Chain:
    """Stored states, log-posterior values and acceptance flags, one row per step."""

    eta: np.ndarray
    l: np.ndarray
    sigma_f2: np.ndarray
    sigma_o2: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray
    seed: int | None = None
    cov_snapshots: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.log_post.size

    @property
    def K(self) -> int:
        return self.eta.shape[1]

    def burn(self, fraction: float = 0.2, thin: int = 1) -> "Chain":
        """Chain with the first ``fraction`` of steps dropped and every ``thin``-th kept."""
        if not 0 <= fraction < 1:
            raise ConfigurationError("burn-in fraction must be in [0, 1)")
        start = int(np.floor(fraction * len(self)))
        return self.take(slice(start, None, max(int(thin), 1)))

    def take(self, sel) -> "Chain":
        """Sub-chain selected by a slice or index array."""
        return Chain(
            self.eta[sel], self.l[sel], self.sigma_f2[sel], self.sigma_o2[sel],
            self.log_post[sel], self.accepted[sel], self.seed, self.cov_snapshots,
        )

    def acceptance_rate(self, burn_in: float = 0.0) -> float:
        a = self.burn(burn_in).accepted
        return float(a.mean()) if a.size else float("nan")

    def state(self, i: int) -> PosteriorState:
        return PosteriorState(self.eta[i], HyperParams(float(self.l[i]), float(self.sigma_f2[i])), float(self.sigma_o2[i]))

    def map_index(self) -> int:
        return int(np.argmax(self.log_post))

    def columns(self) -> list[str]:
        return ["step", "accepted", "log_post"] + [f"eta_{k + 1}" for k in range(self.K)] + list(HYPER_NAMES)

    def to_csv(self, path, header_lines: list[str] | None = None) -> Path:
        """Write one row per step; ``header_lines`` are prepended as '#' comments."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            for line in header_lines or []:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(self.columns())
            for i in range(len(self)):
                w.writerow(
                    [i + 1, int(self.accepted[i]), repr(float(self.log_post[i]))]
                    + [repr(float(v)) for v in self.eta[i]]
                    + [repr(float(self.l[i])), repr(float(self.sigma_f2[i])), repr(float(self.sigma_o2[i]))]
                )
        return path

    @classmethod
    def from_csv(cls, path, seed: int | None = None) -> "Chain":
        rows = [r for r in Path(path).read_text().splitlines() if r and not r.startswith("#")]
        header = rows[0].split(",")
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]]).reshape(-1, len(header))
        K = sum(h.startswith("eta_") for h in header)
        return cls(
            eta=data[:, 3 : 3 + K], l=data[:, 3 + K], sigma_f2=data[:, 4 + K], sigma_o2=data[:, 5 + K],
            log_post=data[:, 2], accepted=data[:, 1].astype(bool), seed=seed,
        )


class _Welford:
    def __init__(self, d: int):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros((d, d))

    def push(self, x: np.ndarray):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += np.outer(delta, x - self.mean)

    @property
    def cov(self) -> np.ndarray:
        c = self.m2 / max(self.n - 1, 1)
        return 0.5 * (c + c.T)


def mcmc_sample(
    logpost: Callable[[PosteriorState], float],
    init: PosteriorState,
    steps: int,
    cfg: AdaptationConfig = AdaptationConfig(),
    seed: int = 0,
) -> Chain:
    """Run the adaptive Metropolis chain for ``steps`` steps from ``init``.

    The same seed gives a bit-identical chain.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    theta = state_to_theta(init)
    K = init.eta.size
    dim = theta.size
    free = np.ones(dim, dtype=bool)
    for name in cfg.pinned:
        free[K + HYPER_NAMES.index(name)] = False
    idx = np.flatnonzero(free)
    d = idx.size
    if d == 0:
        raise ConfigurationError("every component is pinned")

    def target(th):
        try:
            s = theta_to_state(th)
        except InvalidHyperParameterError:
            return -np.inf, -np.inf
        lp = logpost(s)
        # Jacobian of (log sigma_f2, log sigma_o2) -> (sigma_f2, sigma_o2)
        return lp, lp + th[K + 1] + th[K + 2]

    lp, lt = target(theta)
    if not np.isfinite(lp):
        raise InitializationError(f"initial log-posterior is {lp}")

    rng = np.random.default_rng(seed)
    scale = cfg.scale if cfg.scale is not None else 2.38**2 / d
    init_sd = np.broadcast_to(np.asarray(cfg.init_scale, dtype=float), (dim,))[idx]
    cov = np.diag(init_sd**2)
    L = np.linalg.cholesky(cov)
    stats = _Welford(d)

    out_theta = np.empty((steps, dim))
    out_lp = np.empty(steps)
    out_acc = np.zeros(steps, dtype=bool)
    snaps = [(0, cov.copy())]

    for n in range(steps):
        prop = theta.copy()
        prop[idx] += L @ rng.standard_normal(d)
        log_u = np.log(rng.uniform())
        lp_p, lt_p = target(prop)
        if np.isfinite(lt_p) and log_u < lt_p - lt:
            theta, lp, lt = prop, lp_p, lt_p
            out_acc[n] = True
        out_theta[n] = theta
        out_lp[n] = lp
        stats.push(theta[idx])
        if n + 1 >= cfg.adapt_start:
            cov = scale * (stats.cov + cfg.eps * np.eye(d))
            try:
                L = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                # keep the previous factor; happens only with eps = 0 on a frozen chain
                pass
        if (n + 1) % cfg.snapshot_every == 0 or n + 1 == cfg.adapt_start:
            snaps.append((n + 1, cov.copy()))

    return Chain(
        eta=out_theta[:, :K],
        l=out_theta[:, K],
        sigma_f2=np.exp(out_theta[:, K + 1]),
        sigma_o2=np.exp(out_theta[:, K + 2]),
        log_post=out_lp,
        accepted=out_acc,
        seed=seed,
        cov_snapshots=snaps,
    )
