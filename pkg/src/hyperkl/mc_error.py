"""Monte-Carlo estimates of process and surrogate approximation errors.

Process error: a realization of M(q) is drawn from the full grid spectrum
of C(q), its K leading native coordinates are mapped to the reference basis
through B(q), and the reconstruction is compared with the realization.  The
relative error is normalized by sigma_f, the exact L2(Omega, D) norm of M.

Surrogate error: the forward model is solved with the exact realization and
compared in space-time L2 with the surrogate evaluated at xi = B-hat(q) eta.

All estimators return an :class:`ErrorEstimate` with a delta-method
standard error.  Sampling is driven by ``numpy.random.default_rng(seed)``,
so identical seeds give bit-identical results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import ConfigurationError, DimensionError
from .forward import DiffusionConfig, solve
from .kernels import HyperParams, SquaredExponential, assemble_cov_matrix
from .kl import KLBasis, decompose, orient
from .pce import PCSurrogate, eval_surrogate
from .transform import CoordinateTransform, projection_coeffs

__all__ = [
    "ErrorEstimate",
    "ErrorCurve",
    "eps_M",
    "E_M",
    "process_error_samples",
    "eps_U",
    "E_U",
    "surrogate_error_samples",
    "spacetime_norm2",
]

MIN_MC = 100


@dataclass(frozen=True)
class ErrorEstimate:
    value: float
    se: float
    n_mc: int


@dataclass
class ErrorCurve:
    """Errors along one abscissa (K, o or l) for one reference choice."""

    label: str
    abscissa: list = field(default_factory=list)
    values: list = field(default_factory=list)
    se: list = field(default_factory=list)
    n_mc: int = 0
    seed: int = 0

    def append(self, x, est: ErrorEstimate):
        self.abscissa.append(x)
        self.values.append(est.value)
        self.se.append(est.se)
        self.n_mc = est.n_mc

    def rows(self):
        for x, v, s in zip(self.abscissa, self.values, self.se):
            yield {"abscissa": x, "reference": self.label, "error": v, "se": s, "n_mc": self.n_mc, "seed": self.seed}


def write_curves(curves: Sequence[ErrorCurve], path, extra: dict | None = None) -> Path:
    """CSV with columns abscissa, reference, error, se, n_mc, seed (+ extra)."""
    path = Path(path)
    cols = ["abscissa", "reference", "error", "se", "n_mc", "seed"] + list(extra or {})
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for c in curves:
            for row in c.rows():
                row.update(extra or {})
                w.writerow(row)
    return path


def _ratio_estimate(num: np.ndarray, den: np.ndarray) -> ErrorEstimate:
    """sqrt(mean(num) / mean(den)) with a delta-method standard error."""
    n = num.size
    mn, md = num.mean(), den.mean()
    r2 = mn / md
    if n < 2:
        return ErrorEstimate(float(np.sqrt(r2)), float("nan"), n)
    # linearization of mean(num)/mean(den)
    z = (num - r2 * den) / md
    se_r2 = z.std(ddof=1) / np.sqrt(n)
    r = np.sqrt(max(r2, 0.0))
    se = se_r2 / (2.0 * r) if r > 0 else se_r2 ** 0.5
    return ErrorEstimate(float(r), float(max(se, np.finfo(float).tiny)), n)


def _full_basis(kernel, grid, q: HyperParams) -> KLBasis:
    return decompose(assemble_cov_matrix(kernel, grid, q), grid.n)


def process_error_samples(
    q: HyperParams,
    Ks: Sequence[int],
    references: dict,
    rng: np.random.Generator,
    n_real: int = 1,
    kernel=SquaredExponential(),
) -> dict:
    """Squared errors ||M - M_hat_K||_X^2 / sigma_f^2 for one q, paired across K and references.

    The native coordinates are the standard-normal weights of the draw,
    which is what projecting the realization on the K leading modes of
    C(q) and dividing by sqrt(lambda_k) returns.  Using them directly keeps
    modes with round-off-level eigenvalues usable.

    Returns ``{(label, K): array of shape (n_real,)}``.
    """
    first = next(iter(references.values()))
    grid = first.grid
    full = _full_basis(kernel, grid, q)
    z = rng.standard_normal((n_real, grid.n))
    M = z @ full.scaled_modes
    out = {}
    kmax = max(Ks)
    for label, ref in references.items():
        if ref.grid != grid:
            raise DimensionError("references must share one grid")
        if kmax > ref.K:
            raise DimensionError(f"reference {label!r} has only {ref.K} modes")
        refk = ref.truncate(kmax)
        native = orient(full.truncate(kmax), refk) if kmax > 0 else full.truncate(0)
        B = projection_coeffs(native, refk).B if kmax > 0 else np.zeros((0, 0))
        # orientation flips phi_k and its coordinate together
        signs = np.sign(np.einsum("kn,kn->k", native.modes, full.modes[:kmax])) if kmax > 0 else np.zeros(0)
        eta = z[:, :kmax] * signs
        for K in Ks:
            if K == 0:
                Mhat = np.zeros_like(M)
            else:
                eta_hat = eta[:, :K] @ B[:K, :K].T
                Mhat = eta_hat @ refk.modes[:K]
            diff = M - Mhat
            out[(label, K)] = np.sum(diff * diff * grid.weights, axis=1) / q.sigma_f2
    return out


def eps_M(
    q: HyperParams,
    K: int,
    reference: KLBasis,
    n_mc: int = 2000,
    seed: int = 0,
    kernel=SquaredExponential(),
) -> ErrorEstimate:
    """Local relative error of the reference-basis approximation at fixed q."""
    if K > reference.grid.n:
        raise DimensionError("K exceeds the grid size")
    if n_mc < MIN_MC:
        raise ConfigurationError(f"need at least {MIN_MC} Monte-Carlo samples")
    rng = np.random.default_rng(seed)
    err = process_error_samples(q, [K], {"r": reference}, rng, n_real=n_mc, kernel=kernel)[("r", K)]
    return _ratio_estimate(err, np.ones_like(err))


def E_M(
    K: int | Sequence[int],
    references: KLBasis | dict,
    prior,
    n_mc: int = 2000,
    seed: int = 0,
    kernel=SquaredExponential(),
    return_samples: bool = False,
):
    """q-averaged relative error; q is drawn from ``prior`` for every sample.

    With a sequence of K and/or a dict of references the estimates are
    paired (same q and realizations) and returned as a dict keyed by
    ``(label, K)``.
    """
    single = not isinstance(references, dict) and np.ndim(K) == 0
    refs = references if isinstance(references, dict) else {"r": references}
    Ks = [int(K)] if np.ndim(K) == 0 else [int(k) for k in K]
    first = next(iter(refs.values()))
    if n_mc < MIN_MC:
        raise ConfigurationError(f"need at least {MIN_MC} Monte-Carlo samples")
    if max(Ks) > first.grid.n:
        raise DimensionError("K exceeds the grid size")
    rng = np.random.default_rng(seed)
    qs = prior.sample(rng, n_mc)
    acc = {key: np.empty(n_mc) for key in [(lab, k) for lab in refs for k in Ks]}
    for s, q in enumerate(qs):
        errs = process_error_samples(q, Ks, refs, rng, n_real=1, kernel=kernel)
        for key, v in errs.items():
            acc[key][s] = v[0]
    ests = {key: _ratio_estimate(v, np.ones_like(v)) for key, v in acc.items()}
    if single:
        return (ests[("r", Ks[0])], acc[("r", Ks[0])]) if return_samples else ests[("r", Ks[0])]
    return (ests, acc) if return_samples else ests


# ---------------------------------------------------------------------------
# surrogate errors
# ---------------------------------------------------------------------------


def _mass_matrix(n_elems: int) -> np.ndarray:
    h = 1.0 / n_elems
    n = n_elems + 1
    M = np.zeros((n, n))
    for e in range(n_elems):
        M[e : e + 2, e : e + 2] += h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return M


def spacetime_norm2(values: np.ndarray, times: np.ndarray, mass: np.ndarray) -> float:
    """Trapezoid in time of the P1 mass-weighted squared L2 norm in space."""
    per_level = np.einsum("ti,ij,tj->t", values, mass, values)
    return float(trapezoid(per_level, times))


def surrogate_error_samples(
    qs: Sequence[HyperParams],
    surrogates: dict,
    reference: KLBasis,
    cfg: DiffusionConfig,
    rng: np.random.Generator,
    kappa: float = 1e-12,
    kernel=SquaredExponential(),
):
    """Per-sample space-time squared errors and squared norms.

    ``surrogates`` maps a label (e.g. the order) to a full-field surrogate
    built on ``reference``.  Returns ``(err, norm)`` where ``err[label]``
    and ``norm`` are arrays over the samples in ``qs``.
    """
    grid = reference.grid
    if grid.n != cfg.n_elems:
        raise ConfigurationError("surrogate-error studies require the KL grid to match the FE mesh")
    some = next(iter(surrogates.values()))
    if not some.output_shape:
        raise ConfigurationError("surrogate was not trained on the full space-time field")
    n_levels = some.output_shape[0]
    times = np.asarray(some.meta["model"]["times"]) if "times" in (some.meta.get("model") or {}) else None
    for s in surrogates.values():
        if s.output_shape != some.output_shape or s.meta.get("reference") != some.meta.get("reference"):
            raise ConfigurationError("surrogates disagree on layout or reference")
        if s.output_shape[1] != cfg.n_elems + 1:
            raise ConfigurationError("surrogate mesh does not match the solver configuration")
    if times is None:
        raise ConfigurationError("surrogate metadata lacks its stored times")
    mass = _mass_matrix(cfg.n_elems)
    err = {lab: np.empty(len(qs)) for lab in surrogates}
    norm = np.empty(len(qs))
    K = reference.K
    for s, q in enumerate(qs):
        full = _full_basis(kernel, grid, q)
        z = rng.standard_normal(grid.n)
        m = z @ full.scaled_modes
        U = solve(m, cfg, times=times).values
        native = orient(full.truncate(K), reference)
        signs = np.sign(np.einsum("kn,kn->k", native.modes, full.modes[:K]))
        t = CoordinateTransform(projection_coeffs(native, reference).B, reference.eigvals, kappa, q)
        xi = t.Bhat @ (z[:K] * signs)
        norm[s] = spacetime_norm2(U, times, mass)
        for lab, sur in surrogates.items():
            Ut = eval_surrogate(sur, xi[: sur.N]).reshape(n_levels, -1)
            err[lab][s] = spacetime_norm2(U - Ut, times, mass)
    return err, norm


def eps_U(
    q: HyperParams,
    surrogate: PCSurrogate,
    reference: KLBasis,
    cfg: DiffusionConfig,
    n_mc: int = 200,
    seed: int = 0,
    kappa: float = 1e-12,
    kernel=SquaredExponential(),
) -> ErrorEstimate:
    """Local relative space-time error of the surrogate at fixed q."""
    rng = np.random.default_rng(seed)
    err, norm = surrogate_error_samples([q] * n_mc, {"s": surrogate}, reference, cfg, rng, kappa, kernel)
    return _ratio_estimate(err["s"], norm)


def E_U(
    surrogates: PCSurrogate | dict,
    reference: KLBasis,
    cfg: DiffusionConfig,
    prior,
    n_mc: int = 200,
    seed: int = 0,
    kappa: float = 1e-12,
    kernel=SquaredExponential(),
):
    """q-averaged relative surrogate error; paired across a dict of surrogates."""
    single = not isinstance(surrogates, dict)
    surs = {"s": surrogates} if single else surrogates
    rng = np.random.default_rng(seed)
    qs = prior.sample(rng, n_mc)
    err, norm = surrogate_error_samples(qs, surs, reference, cfg, rng, kappa, kernel)
    ests = {lab: _ratio_estimate(e, norm) for lab, e in err.items()}
    return ests["s"] if single else ests
