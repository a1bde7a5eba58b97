"""True log-diffusivity profiles and synthetic noisy observations."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, InverseCrimeError
from .forward import DiffusionConfig, ObservationOperator, predict
from .kernels import Grid1D, se_matrix

__all__ = [
    "TrueProfile",
    "Dataset",
    "true_profile",
    "draw_random_profile",
    "FINE_CONFIG",
    "check_inverse_crime",
    "generate_observations",
    "save_dataset",
    "load_dataset",
]

RAN_SEED = 20160901
RAN_L = 0.25
RAN_SIGMA_F2 = 0.65
RAN_CELLS = 224
FINE_CONFIG = DiffusionConfig(n_elems=224, dt=2e-5, sync=13)


@dataclass(frozen=True, eq=False)
class TrueProfile:
    """A log-diffusivity profile tabulated on cell midpoints of a fine grid."""

    tag: str
    x: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.tag == "sin":
            return np.sin(2.0 * np.pi * x)
        if self.tag == "step":
            return np.where(x < 0.5, -0.5, 0.5)
        grid = Grid1D(self.values.size)
        return self.values[grid.cell_index(x)]

    def on_grid(self, grid: Grid1D) -> np.ndarray:
        return self(grid.midpoints)


def draw_random_profile(seed: int = RAN_SEED, n: int = RAN_CELLS, l: float = RAN_L, sigma_f2: float = RAN_SIGMA_F2) -> np.ndarray:
    """One draw of GP(0, SE(l, sigma_f2)) on the midpoints of ``n`` cells.

    The symmetric square root C^(1/2) z is used, so the draw does not
    depend on the sign convention of the eigen-solver.
    """
    C = se_matrix(Grid1D(n), l, sigma_f2)
    lam, V = np.linalg.eigh(C)
    lam = np.clip(lam, 0.0, None)
    z = np.random.default_rng(seed).standard_normal(n)
    return V @ (np.sqrt(lam) * (V.T @ z))


def _load_ran_fixture() -> np.ndarray | None:
    try:
        text = resources.files("hyperkl").joinpath("fixtures/m_ran.csv").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        return None
    rows = [r.split(",") for r in text.splitlines()[1:] if r]
    return np.array([float(r[1]) for r in rows])


def true_profile(tag: str) -> TrueProfile:
    grid = Grid1D(RAN_CELLS)
    if tag == "sin":
        return TrueProfile("sin", grid.midpoints, np.sin(2.0 * np.pi * grid.midpoints))
    if tag == "step":
        return TrueProfile("step", grid.midpoints, np.where(grid.midpoints < 0.5, -0.5, 0.5))
    if tag == "ran":
        values = _load_ran_fixture()
        if values is None:
            values = draw_random_profile()
        meta = {"seed": RAN_SEED, "l": RAN_L, "sigma_f2": RAN_SIGMA_F2, "cells": RAN_CELLS}
        return TrueProfile("ran", grid.midpoints, values, meta)
    raise ConfigurationError(f"unknown profile {tag!r}; expected sin, step or ran")


def check_inverse_crime(fine: DiffusionConfig, coarse: DiffusionConfig):
    """The data solver needs >= 4x the elements and <= 1/4 the time step."""
    if fine.n_elems < 4 * coarse.n_elems:
        raise InverseCrimeError(f"data mesh has {fine.n_elems} elements, need >= {4 * coarse.n_elems}")
    if fine.dt_eff > 0.25 * coarse.dt_eff * (1 + 1e-12):
        raise InverseCrimeError(f"data time step {fine.dt_eff:.3e} exceeds 1/4 of {coarse.dt_eff:.3e}")


@dataclass(frozen=True, eq=False)
class Dataset:
    d: np.ndarray
    op: ObservationOperator
    sigma_eps2: float
    seed: int | None
    profile: str
    fine: dict
    clean: np.ndarray | None = None

    @property
    def n_obs(self) -> int:
        return self.d.size


def generate_observations(
    profile: TrueProfile,
    fine_cfg: DiffusionConfig = FINE_CONFIG,
    layout: ObservationOperator | None = None,
    sigma_eps2: float = 0.01,
    seed: int = 0,
    coarse_cfg: DiffusionConfig = DiffusionConfig(sync=13),
) -> Dataset:
    """Solve on the fine mesh, observe and add i.i.d. N(0, sigma_eps2) noise.

    ``coarse_cfg`` is the solver configuration of the surrogate and
    inference stages; the fine solver must be strictly finer (see
    :func:`check_inverse_crime`).
    """
    check_inverse_crime(fine_cfg, coarse_cfg)
    if sigma_eps2 < 0:
        raise ConfigurationError("noise variance must be non-negative")
    op = layout if layout is not None else ObservationOperator.uniform()
    if op.n_obs:
        clean = predict(profile, fine_cfg, op)
    else:
        clean = np.zeros(0)
    noise = np.random.default_rng(seed).standard_normal(clean.size) * np.sqrt(sigma_eps2)
    return Dataset(clean + noise, op, float(sigma_eps2), seed, profile.tag, fine_cfg.fingerprint() | {"dt": fine_cfg.dt}, clean)


def save_dataset(ds: Dataset, path, extra: dict | None = None) -> tuple[Path, Path]:
    """CSV with columns x, t, d and a JSON sidecar next to it."""
    path = Path(path)
    xs, ts = ds.op.coordinates()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t", "d"])
        for x, t, d in zip(xs, ts, ds.d):
            w.writerow([repr(float(x)), repr(float(t)), repr(float(d))])
    meta = {
        "profile": ds.profile,
        "sigma_eps2": ds.sigma_eps2,
        "seed": ds.seed,
        "fine_solver": ds.fine,
        "x": ds.op.x.tolist(),
        "t": ds.op.t.tolist(),
        "n_obs": ds.n_obs,
    }
    meta.update(extra or {})
    side = path.with_suffix(".json")
    side.write_text(json.dumps(meta, indent=2))
    return path, side


def load_dataset(path) -> Dataset:
    path = Path(path)
    side = path.with_suffix(".json")
    if not (path.exists() and side.exists()):
        raise ConfigurationError(f"dataset {path} or its sidecar is missing")
    meta = json.loads(side.read_text())
    rows = list(csv.DictReader(path.open()))
    d = np.array([float(r["d"]) for r in rows])
    op = ObservationOperator(np.asarray(meta["x"]), np.asarray(meta["t"]))
    if d.size != op.n_obs:
        raise ConfigurationError("dataset length does not match its observation layout")
    return Dataset(d, op, meta["sigma_eps2"], meta.get("seed"), meta["profile"], meta.get("fine_solver", {}))
