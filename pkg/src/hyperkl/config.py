"""Experiment configuration: YAML files, named presets, hashing and seed derivation."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigurationError
from .forward import DiffusionConfig, ObservationOperator

__all__ = [
    "ExperimentConfig",
    "PRESETS",
    "load_config",
    "derive_seed",
    "config_hash",
    "surrogate_hash",
]


@dataclass
class PriorSection:
    l_min: float = 0.1
    l_max: float = 1.0
    alpha: float = 3.0
    beta: float = 1.0


@dataclass
class ReferenceSection:
    """``kind`` is "average" (q-averaged kernel), "fixed" (C at l, sigma_f2) or "auto".

    "auto" picks the averaged kernel for hyper-parameter inference and the
    pinned covariance for fixed-covariance inference.
    """

    kind: str = "auto"
    l: float = 0.5
    sigma_f2: float = 0.5
    n_nodes: int = 64


@dataclass
class SurrogateSection:
    K: int = 6
    order: int = 5
    kappa: float = 0.0
    method: str = "regression"
    oversampling: float = 3.0
    n_holdout: int = 50


@dataclass
class SolverSection:
    nu0: float = 0.1
    n_elems: int = 56
    dt: float = 1e-4
    T: float = 0.05


@dataclass
class FineSolverSection:
    n_elems: int = 224
    dt: float = 2e-5


@dataclass
class ObservationSection:
    profile: str = "sin"
    n_x: int = 19
    n_t: int = 13
    sigma_eps2: float = 0.01


@dataclass
class MCMCSection:
    mode: str = "hyper"
    steps: int = 50_000
    adapt_start: int = 2000
    eps: float = 1e-8
    init_scale: float = 0.05
    burn_in: float = 0.2
    thin: int = 10
    quantiles: list = field(default_factory=lambda: [0.05, 0.95])


@dataclass
class StudySection:
    grid_n: int = 128
    K_M: int = 15
    Ks: list = field(default_factory=lambda: [5, 10, 15, 20, 25])
    ls: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 11)])
    l_refs: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 1.0])
    n_mc_M: int = 2000
    n_mc_U: int = 200
    orders: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    Ks_U: list = field(default_factory=lambda: [2, 4, 6])
    field_stride: int = 10
    kappa: float = 1e-12


@dataclass
class ExperimentConfig:
    name: str = "custom"
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"
    prior: PriorSection = field(default_factory=PriorSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    solver: SolverSection = field(default_factory=SolverSection)
    fine_solver: FineSolverSection = field(default_factory=FineSolverSection)
    observations: ObservationSection = field(default_factory=ObservationSection)
    mcmc: MCMCSection = field(default_factory=MCMCSection)
    study: StudySection = field(default_factory=StudySection)

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------ checks
    def validate(self):
        p, r, s, m, o = self.prior, self.reference, self.surrogate, self.mcmc, self.observations
        if not 0 < p.l_min < p.l_max:
            raise ConfigurationError("prior: need 0 < l_min < l_max")
        if p.alpha <= 1 or p.beta <= 0:
            raise ConfigurationError("prior: inverse-Gamma needs alpha > 1 (finite mean) and beta > 0")
        if r.kind not in ("auto", "average", "fixed"):
            raise ConfigurationError(f"reference.kind must be auto, average or fixed, got {r.kind!r}")
        if r.l <= 0 or r.sigma_f2 <= 0 or r.n_nodes < 1:
            raise ConfigurationError("reference: l, sigma_f2 and n_nodes must be positive")
        if s.K < 1 or s.order < 0:
            raise ConfigurationError("surrogate: need K >= 1 and order >= 0")
        if s.K > self.solver.n_elems:
            raise ConfigurationError("surrogate.K exceeds the number of grid cells")
        if not 0 <= s.kappa < 1:
            raise ConfigurationError("surrogate.kappa must lie in [0, 1)")
        if s.method not in ("regression", "projection"):
            raise ConfigurationError(f"unknown surrogate method {s.method!r}")
        if s.oversampling < 2:
            raise ConfigurationError("surrogate.oversampling must be >= 2")
        if m.mode not in ("hyper", "fixed"):
            raise ConfigurationError(f"mcmc.mode must be hyper or fixed, got {m.mode!r}")
        if m.steps < 1 or m.adapt_start < 1 or m.thin < 1:
            raise ConfigurationError("mcmc: steps, adapt_start and thin must be >= 1")
        if not 0 <= m.burn_in < 1:
            raise ConfigurationError("mcmc.burn_in must lie in [0, 1)")
        if o.profile not in ("sin", "step", "ran"):
            raise ConfigurationError(f"unknown profile {o.profile!r}")
        if o.n_x < 0 or o.n_t < 1 or o.sigma_eps2 < 0:
            raise ConfigurationError("observations: need n_x >= 0, n_t >= 1, sigma_eps2 >= 0")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        # solver settings are validated by DiffusionConfig itself
        self.solver_config()
        self.fine_config()

    # ------------------------------------------------------------- derived
    @property
    def reference_kind(self) -> str:
        if self.reference.kind != "auto":
            return self.reference.kind
        return "average" if self.mcmc.mode == "hyper" else "fixed"

    def solver_config(self) -> DiffusionConfig:
        s = self.solver
        return DiffusionConfig(s.nu0, s.n_elems, s.dt, s.T, sync=self.observations.n_t)

    def fine_config(self) -> DiffusionConfig:
        f = self.fine_solver
        return DiffusionConfig(self.solver.nu0, f.n_elems, f.dt, self.solver.T, sync=self.observations.n_t)

    def observation_operator(self) -> ObservationOperator:
        return ObservationOperator.uniform(self.observations.n_x, self.observations.n_t, self.solver.T)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def surrogate_dict(self) -> dict:
        """The subset of settings a surrogate artifact depends on."""
        d = self.to_dict()
        ref = dict(d["reference"], kind=self.reference_kind)
        if ref["kind"] == "average":
            ref.pop("l")
            ref.pop("sigma_f2")
            ref["prior"] = {k: d["prior"][k] for k in ("l_min", "l_max", "alpha", "beta")}
        else:
            ref.pop("n_nodes")
        return {
            "reference": ref,
            "surrogate": {k: v for k, v in d["surrogate"].items() if k != "n_holdout"},
            "solver": d["solver"],
            "layout": {"n_x": d["observations"]["n_x"], "n_t": d["observations"]["n_t"]},
            "seed": derive_seed(self.seed, "training"),
        }


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=float).encode()).hexdigest()[:16]


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of every setting that can change a result (not out_dir or threads)."""
    d = cfg.to_dict()
    d.pop("out_dir")
    d.pop("threads")
    return _hash(d)


def surrogate_hash(cfg: ExperimentConfig) -> str:
    return _hash(cfg.surrogate_dict())


def derive_seed(master: int, purpose: str) -> int:
    """Independent 32-bit seed for one purpose, derived from the master seed."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(purpose.encode())])
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------- presets

_DESK = {"surrogate": {"K": 6, "order": 5}, "mcmc": {"steps": 50_000}}
_PAPER = {
    "surrogate": {"K": 15, "order": 10},
    "mcmc": {"steps": 250_000},
    "study": {"Ks_U": [5, 10, 15], "orders": list(range(1, 11))},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


PRESETS: dict = {}
for _scale, _base in (("desk", _DESK), ("paper", _PAPER)):
    for _tag in ("sin", "step", "ran"):
        PRESETS[f"{_scale}-{_tag}"] = _merge(_base, {"name": f"{_scale}-{_tag}", "observations": {"profile": _tag}})


_SECTIONS = {
    "prior": PriorSection,
    "reference": ReferenceSection,
    "surrogate": SurrogateSection,
    "solver": SolverSection,
    "fine_solver": FineSolverSection,
    "observations": ObservationSection,
    "mcmc": MCMCSection,
    "study": StudySection,
}


def from_dict(d: dict) -> ExperimentConfig:
    """Build a config from a nested mapping; unknown keys are errors."""
    if not isinstance(d, dict):
        raise ConfigurationError("configuration must be a mapping")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(d) - top
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        if k in _SECTIONS:
            cls = _SECTIONS[k]
            if not isinstance(v, dict):
                raise ConfigurationError(f"section {k!r} must be a mapping")
            names = {f.name for f in dataclasses.fields(cls)}
            bad = set(v) - names
            if bad:
                raise ConfigurationError(f"unknown keys in {k}: {sorted(bad)}")
            kwargs[k] = cls(**v)
        else:
            kwargs[k] = v
    return ExperimentConfig(**kwargs)


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Preset, then YAML file, then explicit overrides, merged in that order."""
    d: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        d = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
        d = _merge(d, loaded)
    if overrides:
        d = _merge(d, overrides)
    try:
        return from_dict(d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
