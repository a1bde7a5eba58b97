"""Hermite polynomial chaos surrogate of the reference model predictions.

The surrogate is trained on the reference Gaussian field

    m(xi) = sum_k sqrt(lambda_k^r) phi_k^r xi_k,   xi ~ N(0, I_K),

and evaluated at the transformed coordinates xi = B-hat(q) eta during
inference.  Coefficients are fitted non-intrusively, either by least
squares on random draws (default) or by projection on a tensor
Gauss-Hermite rule.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import CapacityError, ConfigurationError, DimensionError, UnderSampledError
from .forward import DiffusionConfig, ObservationOperator, observe, solve
from .kl import KLBasis, reconstruct

__all__ = [
    "MultiIndexSet",
    "PCSurrogate",
    "TrainingSpec",
    "enumerate_multi_indices",
    "hermite_table",
    "hermite_eval",
    "design_matrix",
    "build_surrogate",
    "sample_training",
    "eval_surrogate",
    "observation_model",
    "field_model",
    "basis_fingerprint",
    "held_out_error",
    "save_surrogate",
    "load_surrogate",
]

FORMAT_VERSION = 1
MAX_TERMS = 20_000_000
MIN_OVERSAMPLING = 2


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """Total-order multi-indices in graded lexicographic order.

    ``size`` is available without enumeration; ``indices`` is built on first
    access and refuses sets larger than ``MAX_TERMS``.
    """

    N: int
    order: int

    def __post_init__(self):
        if self.N < 1 or self.order < 0:
            raise ConfigurationError("need N >= 1 and order >= 0")

    @property
    def size(self) -> int:
        return math.comb(self.N + self.order, self.order)

    @property
    def indices(self) -> np.ndarray:
        cached = self.__dict__.get("_indices")
        if cached is None:
            cached = _enumerate(self.N, self.order)
            object.__setattr__(self, "_indices", cached)
        return cached

    def __len__(self) -> int:
        return self.size


def _enumerate(N: int, order: int) -> np.ndarray:
    size = math.comb(N + order, order)
    if size > MAX_TERMS:
        raise CapacityError(f"{size} terms exceed the enumeration cap of {MAX_TERMS}")
    out = np.zeros((size, N), dtype=np.int16)
    row = 0
    for degree in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(N), degree):
            for d in combo:
                out[row, d] += 1
            row += 1
    return out


def enumerate_multi_indices(N: int, o: int) -> MultiIndexSet:
    return MultiIndexSet(N, o)


def hermite_table(xi: np.ndarray, order: int) -> np.ndarray:
    """Orthonormal probabilists' Hermite values He_n(x)/sqrt(n!), n = 0..order.

    Returns an array of shape ``xi.shape + (order + 1,)``.
    """
    xi = np.asarray(xi, dtype=float)
    out = np.empty(xi.shape + (order + 1,))
    out[..., 0] = 1.0
    if order >= 1:
        out[..., 1] = xi
    for n in range(1, order):
        out[..., n + 1] = (xi * out[..., n] - np.sqrt(n) * out[..., n - 1]) / np.sqrt(n + 1)
    return out


def hermite_eval(alpha, xi) -> float:
    """Psi_alpha(xi) for a single multi-index."""
    alpha = np.asarray(alpha, dtype=int)
    xi = np.asarray(xi, dtype=float)
    if alpha.shape != xi.shape:
        raise DimensionError("multi-index and coordinates differ in length")
    tab = hermite_table(xi, int(alpha.max(initial=0)))
    return float(np.prod(tab[np.arange(alpha.size), alpha]))


def design_matrix(index_set: MultiIndexSet, xi: np.ndarray) -> np.ndarray:
    """Psi[s, a] = Psi_{alpha_a}(xi_s) for a batch xi of shape (S, N)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != index_set.N:
        raise DimensionError(f"expected {index_set.N} coordinates, got {xi.shape[1]}")
    tab = hermite_table(xi, index_set.order)
    idx = index_set.indices
    psi = np.ones((xi.shape[0], idx.shape[0]))
    for d in range(index_set.N):
        psi *= tab[:, d, idx[:, d]]
    return psi


@dataclass(frozen=True)
class TrainingSpec:
    """How the surrogate is trained.

    ``method`` is ``"regression"`` (random N(0, I) draws, ``oversampling``
    times the number of terms unless ``n_samples`` is given) or
    ``"projection"`` (tensor Gauss-Hermite rule with ``quad_points`` per
    dimension, default ``order + 1``).
    """

    order: int = 5
    method: str = "regression"
    oversampling: float = 3.0
    n_samples: int | None = None
    quad_points: int | None = None
    seed: int = 0
    n_workers: int = 1


@dataclass(frozen=True, eq=False)
class PCSurrogate:
    index_set: MultiIndexSet
    coeffs: np.ndarray
    output_shape: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.index_set.N

    @property
    def order(self) -> int:
        return self.index_set.order

    @property
    def n_out(self) -> int:
        return self.coeffs.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.coeffs[0]

    def __call__(self, xi):
        return eval_surrogate(self, xi)


def eval_surrogate(s: PCSurrogate, xi: np.ndarray) -> np.ndarray:
    """All outputs at ``xi``; a batch of shape (S, N) gives (S, n_out)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != s.N:
        raise DimensionError(f"surrogate expects {s.N} coordinates, got {xi.shape[-1]}")
    psi = design_matrix(s.index_set, xi)
    out = psi @ s.coeffs
    return out[0] if xi.ndim == 1 else out


def observation_model(cfg: DiffusionConfig, op: ObservationOperator) -> Callable[[np.ndarray], np.ndarray]:
    """Field -> prediction vector at the observation points."""

    def model(m):
        return observe(solve(m, cfg, times=op.t), op)

    model.fingerprint = {"kind": "observations", "solver": cfg.fingerprint(), "x": op.x.tolist(), "t": op.t.tolist()}
    return model


def field_model(cfg: DiffusionConfig, stride: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """Field -> flattened nodal history at every ``stride``-th time level."""
    steps = np.arange(0, cfg.n_steps + 1, stride)
    if steps[-1] != cfg.n_steps:
        steps = np.append(steps, cfg.n_steps)
    times = steps * cfg.dt_eff

    def model(m):
        return solve(m, cfg, times=times).values.ravel()

    model.fingerprint = {"kind": "field", "solver": cfg.fingerprint(), "stride": stride, "times": times.tolist()}
    model.times = times
    model.output_shape = (len(times), cfg.n_elems + 1)
    return model


def basis_fingerprint(basis: KLBasis) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(np.round(basis.eigvals, 14)).tobytes())
    h.update(np.ascontiguousarray(np.round(np.abs(basis.modes), 10)).tobytes())
    return h.hexdigest()[:16]


def _training_nodes(spec: TrainingSpec, index_set: MultiIndexSet):
    N = index_set.N
    if spec.method == "regression":
        n = spec.n_samples if spec.n_samples is not None else int(math.ceil(spec.oversampling * index_set.size))
        if n < MIN_OVERSAMPLING * index_set.size:
            raise UnderSampledError(f"{n} samples are fewer than {MIN_OVERSAMPLING} x {index_set.size} coefficients")
        rng = np.random.default_rng(spec.seed)
        return rng.standard_normal((n, N)), None
    if spec.method == "projection":
        p = spec.quad_points or index_set.order + 1
        if p ** N > MAX_TERMS:
            raise CapacityError(f"tensor rule with {p}^{N} nodes is too large")
        x1, w1 = np.polynomial.hermite_e.hermegauss(p)
        w1 = w1 / np.sqrt(2.0 * np.pi)
        grid = np.array(list(itertools.product(x1, repeat=N)))
        wts = np.prod(np.array(list(itertools.product(w1, repeat=N))), axis=1)
        return grid, wts
    raise ConfigurationError(f"unknown training method {spec.method!r}")


def _active_reference(reference: KLBasis, kappa: float) -> KLBasis:
    lam = reference.eigvals
    keep = lam / lam[0] > kappa if lam[0] > 0 else np.zeros(reference.K, bool)
    k_pc = int(np.count_nonzero(keep))
    if k_pc < 1:
        raise ConfigurationError("threshold removes every reference mode")
    return reference.truncate(k_pc)


def sample_training(model: Callable, reference: KLBasis, spec: TrainingSpec, kappa: float = 0.0):
    """Training nodes, quadrature weights (None for regression) and outputs."""
    active = _active_reference(reference, kappa)
    xi, weights = _training_nodes(spec, MultiIndexSet(active.K, spec.order))
    fields = reconstruct(active, xi)
    if spec.n_workers > 1:
        with ThreadPoolExecutor(spec.n_workers) as pool:
            outputs = list(pool.map(model, fields))
    else:
        outputs = [model(f) for f in fields]
    Y = np.asarray(outputs, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    return xi, weights, Y


def build_surrogate(
    model: Callable, reference: KLBasis, spec: TrainingSpec, kappa: float = 0.0, training=None
) -> PCSurrogate:
    """Train a PC surrogate of ``model`` on the reference Gaussian field.

    ``model`` maps cell values of the log-diffusivity on ``reference.grid``
    to an output vector.  Only the ``K_pc`` leading reference modes with
    lambda_k / lambda_1 > kappa enter the field.  ``training`` may carry a
    precomputed ``(xi, weights, Y)`` triple from :func:`sample_training`,
    e.g. to fit several orders on one set of solves.
    """
    active = _active_reference(reference, kappa)
    index_set = MultiIndexSet(active.K, spec.order)
    if training is None:
        training = sample_training(model, reference, spec, kappa)
    xi, weights, Y = training
    if xi.shape[1] != active.K:
        raise DimensionError("training nodes do not match the active reference dimension")
    psi = design_matrix(index_set, xi)
    if weights is None:
        if xi.shape[0] < MIN_OVERSAMPLING * index_set.size:
            raise UnderSampledError(f"{xi.shape[0]} samples are fewer than {MIN_OVERSAMPLING} x {index_set.size} coefficients")
        coeffs, _, rank, _ = np.linalg.lstsq(psi, Y, rcond=None)
        if rank < index_set.size:
            raise UnderSampledError(f"regression matrix has rank {rank} < {index_set.size}")
    else:
        coeffs = psi.T @ (weights[:, None] * Y)
    resid = Y - psi @ coeffs
    meta = {
        "version": FORMAT_VERSION,
        "method": "regression" if weights is None else "projection",
        "order": spec.order,
        "seed": spec.seed,
        "n_samples": int(Y.shape[0]),
        "kappa": float(kappa),
        "K": reference.K,
        "K_pc": active.K,
        "reference": basis_fingerprint(reference),
        "residual_rms": float(np.sqrt(np.mean(resid**2))),
        "residual_max": float(np.max(np.abs(resid))),
        "model": getattr(model, "fingerprint", None),
    }
    shape = tuple(getattr(model, "output_shape", ()))
    return PCSurrogate(index_set, coeffs, shape, meta)


def held_out_error(s: PCSurrogate, model: Callable, reference: KLBasis, n: int = 50, seed: int = 1, kappa: float = 0.0) -> float:
    """Relative l2 error sqrt(sum |u - u~|^2 / sum |u|^2) over fresh reference draws."""
    active = _active_reference(reference, kappa)
    xi = np.random.default_rng(seed).standard_normal((n, active.K))
    fields = reconstruct(active, xi)
    Y = np.array([model(f) for f in fields]).reshape(n, -1)
    err = Y - eval_surrogate(s, xi).reshape(n, -1)
    return float(np.sqrt(np.sum(err**2) / np.sum(Y**2)))


def save_surrogate(s: PCSurrogate, path) -> Path:
    """Write an ``.npz`` artifact holding the coefficients and JSON metadata."""
    path = Path(path)
    np.savez(
        path,
        coeffs=s.coeffs,
        N=s.N,
        order=s.order,
        output_shape=np.asarray(s.output_shape, dtype=int),
        meta=json.dumps(s.meta, sort_keys=True),
    )
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def load_surrogate(path) -> PCSurrogate:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported surrogate format {meta.get('version')}")
        index_set = MultiIndexSet(int(z["N"]), int(z["order"]))
        return PCSurrogate(index_set, z["coeffs"].copy(), tuple(int(v) for v in z["output_shape"]), meta)
