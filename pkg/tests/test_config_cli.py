import csv
import json

import numpy as np
import pytest
import yaml

from hyperkl.cli import cmd_build_surrogate, cmd_error_study, cmd_generate_data, cmd_infer, main
from hyperkl.config import PRESETS, config_hash, derive_seed, load_config, surrogate_hash
from hyperkl.exceptions import ConfigurationError, StaleArtifactError
from hyperkl.inference import Chain
from hyperkl.pce import load_surrogate

SMALL = {
    "surrogate": {"K": 2, "order": 2},
    "mcmc": {"steps": 1500, "adapt_start": 500, "thin": 1},
    "study": {"grid_n": 32, "Ks": [1, 2, 4], "K_M": 4, "ls": [0.3, 0.5, 1.0], "l_refs": [0.5], "n_mc_M": 100,
              "n_mc_U": 100, "orders": [1, 2], "Ks_U": [1, 2]},
}


def small(preset="desk-sin", **extra):
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    for k, v in extra.items():
        d.setdefault(k, {}).update(v) if isinstance(v, dict) else d.__setitem__(k, v)
    return load_config(preset=preset, overrides=d)


# ---------------------------------------------------------------------- config


def test_presets_exist_and_differ():
    for scale in ("desk", "paper"):
        for tag in ("sin", "step", "ran"):
            cfg = load_config(preset=f"{scale}-{tag}")
            assert cfg.observations.profile == tag
    desk, paper = load_config(preset="desk-sin"), load_config(preset="paper-sin")
    assert (desk.surrogate.K, desk.surrogate.order) == (6, 5)
    assert (paper.surrogate.K, paper.surrogate.order, paper.mcmc.steps) == (15, 10, 250_000)
    assert desk.observation_operator().n_obs == 247
    assert set(PRESETS) >= {"desk-sin", "paper-ran"}


def test_yaml_file_and_errors(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 7\nsurrogate:\n  K: 3\n")
    cfg = load_config(p, preset="desk-step")
    assert cfg.seed == 7 and cfg.surrogate.K == 3 and cfg.observations.profile == "step"
    p.write_text("surrogate:\n  K: 3\n  flavour: 1\n")
    with pytest.raises(ConfigurationError):
        load_config(p)
    with pytest.raises(ConfigurationError):
        load_config(preset="nope")
    with pytest.raises(ConfigurationError):
        load_config(overrides={"mcmc": {"mode": "both"}})
    with pytest.raises(ConfigurationError):
        load_config(overrides={"surrogate": {"oversampling": 1.5}})


def test_hashes_and_seeds():
    a, b = small(), small()
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) == config_hash(small(out_dir="elsewhere", threads=4))
    assert config_hash(a) != config_hash(small(seed=1))
    # MCMC settings do not touch the surrogate
    assert surrogate_hash(a) == surrogate_hash(small(mcmc={"steps": 10}))
    assert surrogate_hash(a) != surrogate_hash(small(surrogate={"order": 3}))
    assert derive_seed(0, "mcmc") == derive_seed(0, "mcmc") != derive_seed(0, "data")


# ------------------------------------------------------------------------- cli


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small()
    cmd_build_surrogate(cfg, out)
    cmd_generate_data(cfg, out)
    cmd_infer(cfg, out)
    return cfg, out


def test_build_is_idempotent(run_dir):
    cfg, out = run_dir
    meta1 = json.loads((out / "surrogate.json").read_text())
    mtime = (out / "surrogate.npz").stat().st_mtime_ns
    cmd_build_surrogate(cfg, out)
    assert (out / "surrogate.npz").stat().st_mtime_ns == mtime
    cmd_build_surrogate(cfg, out, force=True)
    meta2 = json.loads((out / "surrogate.json").read_text())
    assert meta1["artifact_fingerprint"] == meta2["artifact_fingerprint"]
    assert meta2["config_hash"] == config_hash(cfg) and "training" in meta2["seeds"]


def test_order_zero_artifact_is_constant(tmp_path):
    cfg = small(surrogate={"order": 0})
    sur = load_surrogate(cmd_build_surrogate(cfg, tmp_path))
    np.testing.assert_allclose(sur(np.zeros(2)), sur(np.array([2.0, -1.0])))


def test_infer_outputs(run_dir):
    cfg, out = run_dir
    diag = json.loads((out / "diagnostics.json").read_text())
    assert set(diag["kld"]) == {"eta_1", "eta_2", "l", "sigma_f2"}
    assert diag["config_hash"] == config_hash(cfg) and diag["seed"] == cfg.seed
    assert 0 < diag["acceptance_rate"] < 1
    lines = (out / "chain.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    ch = Chain.from_csv(out / "chain.csv")
    assert len(ch) == 1500
    rows = list(csv.reader(l for l in (out / "profiles.csv").read_text().splitlines() if not l.startswith("#")))
    assert rows[0] == ["x", "median", "mean", "q05", "q95", "map", "truth"]
    assert len(rows) == 1 + cfg.solver.n_elems


def test_fixed_mode_constant_q(run_dir, tmp_path):
    _, out = run_dir
    cfg = small(mcmc={"mode": "fixed"})
    cmd_build_surrogate(cfg, tmp_path)
    cmd_infer(cfg, tmp_path, data_path=out / "data.csv")
    ch = Chain.from_csv(tmp_path / "chain.csv")
    assert np.all(ch.l == cfg.reference.l) and np.all(ch.sigma_f2 == cfg.reference.sigma_f2)
    assert "l" not in json.loads((tmp_path / "diagnostics.json").read_text())["kld"]


def test_stale_surrogate(run_dir, tmp_path):
    _, out = run_dir
    cfg = small(surrogate={"order": 3})
    with pytest.raises(StaleArtifactError):
        cmd_infer(cfg, tmp_path, data_path=out / "data.csv", sur_path=out / "surrogate.npz")


def test_main_exit_codes(run_dir, tmp_path, capsys):
    _, out = run_dir
    bad = tmp_path / "bad.yaml"
    bad.write_text("mcmc:\n  mode: sideways\n")
    assert main(["generate-data", "--config", str(bad), "--out", str(tmp_path)]) == 2
    stale = tmp_path / "stale.yaml"
    stale.write_text(yaml.safe_dump(dict(SMALL, surrogate={"K": 2, "order": 1})))
    code = main(["infer", "--preset", "desk-sin", "--config", str(stale), "--out", str(tmp_path),
                 "--data", str(out / "data.csv"), "--surrogate", str(out / "surrogate.npz")])
    assert code == 4
    assert "build-surrogate" in capsys.readouterr().err


def test_main_generate_data(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text(yaml.safe_dump(SMALL))
    assert main(["generate-data", "--preset", "desk-ran", "--config", str(cfg_file), "--out", str(tmp_path), "--seed", "3"]) == 0
    meta = json.loads((tmp_path / "data.json").read_text())
    assert meta["master_seed"] == 3 and meta["profile"] == "ran" and meta["n_obs"] == 247


def test_zero_observation_infer(tmp_path):
    cfg = small(observations={"n_x": 0}, mcmc={"steps": 20_000, "adapt_start": 2000, "thin": 10})
    cmd_generate_data(cfg, tmp_path)
    cmd_infer(cfg, tmp_path)
    ch = Chain.from_csv(tmp_path / "chain.csv").burn(0.2)
    assert np.abs(ch.eta.mean(axis=0)).max() < 0.25
    np.testing.assert_allclose(ch.eta.var(axis=0), 1.0, rtol=0.25)


def test_stretching_study_identity_row(tmp_path):
    cfg = small()
    p = cmd_error_study(cfg, "stretching_vs_l", tmp_path)
    rows = list(csv.DictReader(p.open()))
    row = next(r for r in rows if r["reference"] == "l_r=0.5" and float(r["l"]) == 0.5)
    assert float(row["stretch"]) == pytest.approx(1.0, abs=1e-8)
    assert {r["config_hash"] for r in rows} == {config_hash(cfg)}
    assert p.with_suffix(".json").exists()


def test_eps_M_vs_K_study(tmp_path):
    cfg = small()
    rows = list(csv.DictReader(cmd_error_study(cfg, "eps_M_vs_K", tmp_path).open()))
    avg = [r for r in rows if r["reference"] == "average"]
    err = [float(r["error"]) for r in avg]
    se = [float(r["se"]) for r in avg]
    assert all(b < a + 2 * s for a, b, s in zip(err, err[1:], se))


def test_eps_U_vs_o_study(tmp_path):
    rows = list(csv.DictReader(cmd_error_study(small(), "eps_U_vs_o", tmp_path).open()))
    assert [int(r["abscissa"]) for r in rows] == [1, 2]


def test_unknown_study(tmp_path):
    with pytest.raises(ConfigurationError):
        cmd_error_study(small(), "eps_Z", tmp_path)
