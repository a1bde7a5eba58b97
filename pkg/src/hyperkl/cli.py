"""Command-line driver for the offline (surrogate) and online (MCMC) stages.

Subcommands::

    hyperkl build-surrogate   train and save the PC surrogate
    hyperkl generate-data     synthetic observations of a true profile
    hyperkl infer             adaptive Metropolis run plus diagnostics
    hyperkl error-study       Monte-Carlo error and stretching tables

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 stale artifact (surrogate built for a different configuration).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .config import ExperimentConfig, config_hash, derive_seed, load_config, surrogate_hash
from .data import generate_observations, load_dataset, save_dataset, true_profile
from .forward import DiffusionConfig
from .exceptions import ConfigurationError, HyperKLError, StaleArtifactError
from .inference import (
    AdaptationConfig,
    LogPosterior,
    PosteriorState,
    Priors,
    field_posterior_stats,
    kde,
    kld_threshold,
    kld_to_logpdf,
    mcmc_sample,
)
from .kernels import Grid1D, HyperParams, SquaredExponential, assemble_cov_matrix, average_kernel
from .kl import KLBasis, decompose
from .mc_error import E_M, E_U, ErrorCurve, eps_M, write_curves
from .pce import (
    TrainingSpec,
    basis_fingerprint,
    build_surrogate,
    eval_surrogate,
    field_model,
    held_out_error,
    load_surrogate,
    observation_model,
    sample_training,
    save_surrogate,
)
from .transform import TransformBuilder, stretching

log = logging.getLogger("hyperkl")

STUDIES = ("eps_M_vs_K", "eps_M_vs_l", "eps_U_vs_o", "eps_U_vs_K", "stretching_vs_l")
SE = SquaredExponential()


# --------------------------------------------------------------------- helpers


def build_reference(cfg: ExperimentConfig, n: int | None = None, K: int | None = None, kind: str | None = None,
                    l: float | None = None) -> KLBasis:
    """Reference KL basis on ``n`` cells (default: the FE mesh)."""
    grid = Grid1D(n or cfg.solver.n_elems)
    K = K or cfg.surrogate.K
    kind = kind or cfg.reference_kind
    if kind == "average":
        prior = Priors(K, cfg.prior.l_min, cfg.prior.l_max, cfg.prior.alpha, cfg.prior.beta).hyper_prior()
        kernel = average_kernel(SE, prior, grid, cfg.reference.n_nodes)
        return decompose(assemble_cov_matrix(kernel, grid, None), K)
    q = HyperParams(l if l is not None else cfg.reference.l, cfg.reference.sigma_f2)
    return decompose(assemble_cov_matrix(SE, grid, q), K)


def _stamp(cfg: ExperimentConfig, **extra) -> dict:
    return {
        "version": __version__,
        "config_name": cfg.name,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        **extra,
    }


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, default=float))
    return path


def _training_spec(cfg: ExperimentConfig, order: int | None = None) -> TrainingSpec:
    s = cfg.surrogate
    return TrainingSpec(
        order=s.order if order is None else order,
        method=s.method,
        oversampling=s.oversampling,
        seed=derive_seed(cfg.seed, "training"),
        n_workers=cfg.threads,
    )


# -------------------------------------------------------------------- commands


def cmd_build_surrogate(cfg: ExperimentConfig, out: Path, force: bool = False) -> Path:
    """Train the observation surrogate; reuse an existing artifact with the same hash."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / "surrogate.npz"
    side = out / "surrogate.json"
    s_hash = surrogate_hash(cfg)
    if not force and path.exists() and side.exists():
        if json.loads(side.read_text()).get("surrogate_hash") == s_hash:
            log.info("surrogate %s is up to date", path)
            return path
    ref = build_reference(cfg)
    model = observation_model(cfg.solver_config(), cfg.observation_operator())
    t0 = time.perf_counter()
    sur = build_surrogate(model, ref, _training_spec(cfg), kappa=cfg.surrogate.kappa)
    elapsed = time.perf_counter() - t0
    err = held_out_error(sur, model, ref, cfg.surrogate.n_holdout, derive_seed(cfg.seed, "holdout"), cfg.surrogate.kappa)
    save_surrogate(sur, path)
    fp = _artifact_fingerprint(path)
    _write_json(side, _stamp(
        cfg,
        surrogate_hash=s_hash,
        artifact_fingerprint=fp,
        reference_kind=cfg.reference_kind,
        reference_fingerprint=basis_fingerprint(ref),
        held_out_error=err,
        n_terms=sur.index_set.size,
        training_seconds=elapsed,
        seeds={"training": derive_seed(cfg.seed, "training"), "holdout": derive_seed(cfg.seed, "holdout")},
    ))
    log.info("surrogate: %d terms, held-out error %.3e, %.1fs", sur.index_set.size, err, elapsed)
    return path


def _artifact_fingerprint(path: Path) -> str:
    sur = load_surrogate(path)
    h = hashlib.sha256(np.ascontiguousarray(sur.coeffs).tobytes())
    h.update(json.dumps(sur.meta, sort_keys=True).encode())
    return h.hexdigest()[:16]


def cmd_generate_data(cfg: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    seed = derive_seed(cfg.seed, "data")
    ds = generate_observations(
        true_profile(cfg.observations.profile),
        cfg.fine_config(),
        cfg.observation_operator(),
        cfg.observations.sigma_eps2,
        seed,
        coarse_cfg=cfg.solver_config(),
    )
    path, _ = save_dataset(ds, out / "data.csv", extra={"config_hash": config_hash(cfg), "master_seed": cfg.seed})
    log.info("dataset: %d observations of m_%s", ds.n_obs, ds.profile)
    return path


def _check_surrogate(cfg: ExperimentConfig, sur_path: Path, ref: KLBasis):
    side = sur_path.with_suffix(".json")
    if not side.exists():
        raise StaleArtifactError(f"surrogate sidecar {side} is missing")
    meta = json.loads(side.read_text())
    if meta.get("surrogate_hash") != surrogate_hash(cfg):
        raise StaleArtifactError("surrogate was built for a different configuration; rerun build-surrogate")
    sur = load_surrogate(sur_path)
    if sur.meta.get("reference") != basis_fingerprint(ref):
        raise StaleArtifactError("surrogate reference basis does not match the configuration")
    return sur


def cmd_infer(cfg: ExperimentConfig, out: Path, data_path: Path | None = None, sur_path: Path | None = None) -> dict:
    """Run the chain and write chain.csv, diagnostics.json, kde.csv and profiles.csv."""
    out.mkdir(parents=True, exist_ok=True)
    data_path = data_path or out / "data.csv"
    sur_path = sur_path or out / "surrogate.npz"
    ds = load_dataset(data_path)
    ref = build_reference(cfg)
    K = cfg.surrogate.K
    sur = None
    if ds.n_obs:
        sur = _check_surrogate(cfg, sur_path, ref)
        if sur.n_out != ds.n_obs:
            raise StaleArtifactError(f"surrogate predicts {sur.n_out} values, dataset has {ds.n_obs}")
    priors = Priors(K, cfg.prior.l_min, cfg.prior.l_max, cfg.prior.alpha, cfg.prior.beta)
    builder = TransformBuilder(SE, ref, cfg.surrogate.kappa)
    logpost = LogPosterior(ds.d, priors, sur, builder)

    fixed = cfg.mcmc.mode == "fixed"
    q0 = HyperParams(cfg.reference.l, cfg.reference.sigma_f2) if fixed else HyperParams(
        0.5 * (cfg.prior.l_min + cfg.prior.l_max), priors.sigma_f2_mean)
    if ds.n_obs:
        r = ds.d - eval_surrogate(sur, np.zeros(sur.N))
        s2 = float(r @ r / r.size)
    else:
        s2 = 1.0
    init = PosteriorState(np.zeros(K), q0, s2)
    adapt = AdaptationConfig(
        adapt_start=cfg.mcmc.adapt_start,
        eps=cfg.mcmc.eps,
        init_scale=cfg.mcmc.init_scale,
        # without data the Jeffreys prior leaves sigma_o2 improper, so it is held fixed
        pinned=(("l", "sigma_f2") if fixed else ()) + (() if ds.n_obs else ("sigma_o2",)),
    )
    seed = derive_seed(cfg.seed, "mcmc")
    t0 = time.perf_counter()
    chain = mcmc_sample(logpost, init, cfg.mcmc.steps, adapt, seed)
    elapsed = time.perf_counter() - t0
    log.info("chain: %d steps in %.1fs, acceptance %.3f", len(chain), elapsed, chain.acceptance_rate(cfg.mcmc.burn_in))

    stamp = [f"config_hash={config_hash(cfg)}", f"seed={cfg.seed}", f"mcmc_seed={seed}", f"mode={cfg.mcmc.mode}"]
    chain.to_csv(out / "chain.csv", stamp)

    kept = chain.burn(cfg.mcmc.burn_in, cfg.mcmc.thin)
    dens = {f"eta_{k + 1}": kde(kept.eta[:, k]) for k in range(K)}
    klds = {name: kld_to_logpdf(d, stats.norm.logpdf) for name, d in dens.items()}
    if ds.n_obs:
        dens["sigma_o2"] = kde(kept.sigma_o2)
    if not fixed:
        dens["l"] = kde(kept.l)
        dens["sigma_f2"] = kde(kept.sigma_f2)
        klds["l"] = kld_to_logpdf(dens["l"], np.vectorize(priors.log_l), cfg.prior.l_min, cfg.prior.l_max)
        klds["sigma_f2"] = kld_to_logpdf(dens["sigma_f2"], np.vectorize(priors.log_sigma_f2), 0.0)

    prof = field_posterior_stats(chain, ref, builder, cfg.mcmc.quantiles, cfg.mcmc.burn_in, cfg.mcmc.thin)
    truth = true_profile(ds.profile).on_grid(ref.grid)
    i_map = chain.map_index()
    tau = kld_threshold(len(kept), n_boot=100, seed=derive_seed(cfg.seed, "kld_threshold"))
    diag = _stamp(
        cfg,
        mcmc_seed=seed,
        mode=cfg.mcmc.mode,
        steps=len(chain),
        seconds=elapsed,
        acceptance_rate=chain.acceptance_rate(cfg.mcmc.burn_in),
        n_retained=len(kept),
        kld=klds,
        kld_threshold=tau,
        n_informed=int(sum(v > tau for k, v in klds.items() if k.startswith("eta_"))),
        map_state={
            "step": i_map + 1,
            "log_post": float(chain.log_post[i_map]),
            "eta": chain.eta[i_map].tolist(),
            "l": float(chain.l[i_map]),
            "sigma_f2": float(chain.sigma_f2[i_map]),
            "sigma_o2": float(chain.sigma_o2[i_map]),
        },
        kde_modes={name: d.mode for name, d in dens.items()},
        profiles=prof.as_dict(),
        truth=truth.tolist(),
        median_distance=float(np.sqrt(np.sum((prof.median - truth) ** 2 * ref.grid.weights))),
    )
    _write_json(out / "diagnostics.json", diag)

    with (out / "kde.csv").open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash(cfg)} seed={cfg.seed}\n")
        w = csv.writer(fh)
        w.writerow(["variable", "x", "density"])
        for name, d in dens.items():
            for x, p in zip(d.x, d.p):
                w.writerow([name, repr(float(x)), repr(float(p))])

    with (out / "profiles.csv").open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash(cfg)} seed={cfg.seed}\n")
        qcols = [f"q{int(round(100 * q)):02d}" for q in prof.quantiles]
        w = csv.writer(fh)
        w.writerow(["x", "median", "mean", *qcols, "map", "truth"])
        for i, x in enumerate(prof.x):
            w.writerow([x, prof.median[i], prof.mean[i], *[v[i] for v in prof.quantiles.values()], prof.map[i], truth[i]])
    return {"chain": out / "chain.csv", "diagnostics": out / "diagnostics.json"}


def cmd_error_study(cfg: ExperimentConfig, study: str, out: Path) -> Path:
    """Write ``<study>.csv`` and a JSON sidecar."""
    if study not in STUDIES:
        raise ConfigurationError(f"unknown study {study!r}; choose from {', '.join(STUDIES)}")
    out.mkdir(parents=True, exist_ok=True)
    st = cfg.study
    seed = derive_seed(cfg.seed, study)
    path = out / f"{study}.csv"
    extra = {"config_hash": config_hash(cfg)}
    t0 = time.perf_counter()

    def refs_M(K):
        r = {"average": build_reference(cfg, st.grid_n, K, "average")}
        for lr in st.l_refs:
            r[f"l_r={lr}"] = build_reference(cfg, st.grid_n, K, "fixed", l=lr)
        return r

    if study == "eps_M_vs_K":
        refs = refs_M(max(st.Ks))
        prior = Priors(1, cfg.prior.l_min, cfg.prior.l_max, cfg.prior.alpha, cfg.prior.beta).hyper_prior()
        ests = E_M(st.Ks, refs, prior, st.n_mc_M, seed)
        curves = []
        for lab in refs:
            c = ErrorCurve(lab, seed=seed)
            for K in st.Ks:
                c.append(K, ests[(lab, K)])
            curves.append(c)
        write_curves(curves, path, extra)
    elif study == "eps_M_vs_l":
        refs = refs_M(st.K_M)
        curves = []
        for lab, ref in refs.items():
            c = ErrorCurve(lab, seed=seed)
            for l in st.ls:
                c.append(l, eps_M(HyperParams(l, cfg.reference.sigma_f2), st.K_M, ref, st.n_mc_M, seed))
            curves.append(c)
        write_curves(curves, path, extra)
    elif study == "stretching_vs_l":
        refs = refs_M(st.K_M)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "reference", "beta_max", "stretch", "config_hash"])
            for lab, ref in refs.items():
                tb = TransformBuilder(SE, ref, st.kappa)
                for l in st.ls:
                    rep = stretching(tb(HyperParams(l, cfg.reference.sigma_f2)))
                    w.writerow([l, lab, rep.beta_max, rep.stretch, extra["config_hash"]])
    else:
        solver = _study_solver(cfg)
        model = field_model(solver, st.field_stride)
        prior = Priors(1, cfg.prior.l_min, cfg.prior.l_max, cfg.prior.alpha, cfg.prior.beta).hyper_prior()
        c = ErrorCurve("average", seed=seed)
        if study == "eps_U_vs_o":
            ref = build_reference(cfg, solver.n_elems, cfg.surrogate.K, "average")
            top = _training_spec(cfg, max(st.orders))
            training = sample_training(model, ref, top, st.kappa)
            surs = {o: build_surrogate(model, ref, _training_spec(cfg, o), st.kappa, training) for o in st.orders}
            ests = E_U(surs, ref, solver, prior, st.n_mc_U, seed, st.kappa)
            for o in st.orders:
                c.append(o, ests[o])
        else:
            for K in st.Ks_U:
                ref = build_reference(cfg, solver.n_elems, K, "average")
                sur = build_surrogate(model, ref, _training_spec(cfg), st.kappa)
                c.append(K, E_U(sur, ref, solver, prior, st.n_mc_U, seed, st.kappa))
        write_curves([c], path, extra)
    _write_json(path.with_suffix(".json"), _stamp(cfg, study=study, study_seed=seed, seconds=time.perf_counter() - t0))
    return path


def _study_solver(cfg: ExperimentConfig) -> DiffusionConfig:
    """Solver for surrogate-error studies: the configured mesh without observation sync."""
    s = cfg.solver
    return DiffusionConfig(s.nu0, s.n_elems, s.dt, s.T)


# ------------------------------------------------------------------------ main


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--preset", help="named preset, e.g. desk-sin or paper-ran")
    common.add_argument("--out", type=Path, help="output directory (default: out_dir from the config)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads for surrogate training")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hyperkl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("build-surrogate", parents=[common], help="train and save the PC surrogate")
    b.add_argument("--force", action="store_true", help="rebuild even if an up-to-date artifact exists")
    sub.add_parser("generate-data", parents=[common], help="synthetic observations")
    i = sub.add_parser("infer", parents=[common], help="run MCMC and write diagnostics")
    i.add_argument("--data", type=Path, help="dataset CSV (default: OUT/data.csv)")
    i.add_argument("--surrogate", type=Path, help="surrogate artifact (default: OUT/surrogate.npz)")
    e = sub.add_parser("error-study", parents=[common], help="Monte-Carlo error tables")
    e.add_argument("--study", required=True, help=f"one of {', '.join(STUDIES)}")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = load_config(args.config, args.preset, overrides)
        out = args.out or Path(cfg.out_dir)
        if args.command == "build-surrogate":
            result = cmd_build_surrogate(cfg, out, args.force)
        elif args.command == "generate-data":
            result = cmd_generate_data(cfg, out)
        elif args.command == "infer":
            result = cmd_infer(cfg, out, args.data, args.surrogate)
        else:
            result = cmd_error_study(cfg, args.study, out)
    except HyperKLError as exc:
        print(f"hyperkl: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(result if not isinstance(result, dict) else "\n".join(str(v) for v in result.values()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
