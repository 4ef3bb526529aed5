"""CLI surface: config schema, commands, exit codes, report determinism."""

import json
import os

import numpy as np
import pytest

from hodge5.cli import main
from hodge5.config import load_config
from hodge5.errors import ConfigError
from hodge5.fields import MetricField, write_sym_tensor_field, SymTensorField


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {"schema_version": 1, "seed": 7, "lattice": {"K": 1},
           "metric": {"kind": "flat"}}
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(args):
    return main([str(a) for a in args])


# --- config ------------------------------------------------------------------


def test_config_defaults_filled(tmp_path):
    cfg = load_config(write_config(tmp_path))
    assert cfg["spectrum"]["dense_threshold"] == 4000
    assert cfg["split"]["eps_grid"][0] == -1e-2


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 1, "bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text(json.dumps({"schema_version": 1,
                                "spectrum": {"counts": 3}}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_rejects_bad_version_and_tolerances(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text(json.dumps({"schema_version": 1,
                                "spectrum": {"cluster_tol": -1.0}}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_rejects_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.json")


# --- spectrum command -----------------------------------------------------------


def test_cmd_spectrum_flat(tmp_path):
    cfg = write_config(tmp_path, spectrum={"cluster_tol": 1e-9})
    out = tmp_path / "out"
    assert run(["spectrum", "--config", cfg, "--out", out]) == 0
    report = json.loads((out / "spectrum.json").read_text())
    assert report["clusters"][0]["value"] == pytest.approx(1.0)
    assert report["clusters"][0]["multiplicity"] == 60
    lines = (out / "spectrum.csv").read_text().splitlines()
    assert len(lines) == 1 + 5


def test_cmd_spectrum_malformed_config_no_outputs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "junk": True}))
    out = tmp_path / "outbad"
    assert run(["spectrum", "--config", bad, "--out", out]) == 2
    assert not out.exists() or not any(out.iterdir())


def test_cmd_spectrum_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    assert run(["spectrum", "--config", cfg, "--out", out1]) == 0
    assert run(["spectrum", "--config", cfg, "--out", out2]) == 0
    assert (out1 / "spectrum.json").read_bytes() == \
        (out2 / "spectrum.json").read_bytes()
    assert (out1 / "spectrum.csv").read_bytes() == \
        (out2 / "spectrum.csv").read_bytes()


def test_cmd_spectrum_sampled_metric_file(tmp_path):
    g = MetricField.conformal(
        [{"c": 0.1, "kind": "cos", "k": [1, 0, 0, 0, 0]}], grid_size=8)
    mfile = tmp_path / "metric.h5st"
    write_sym_tensor_field(mfile, SymTensorField("sampled", grid=g.grid))
    cfg = write_config(tmp_path, metric={"kind": "sampled",
                                         "file": str(mfile)})
    out = tmp_path / "out"
    assert run(["spectrum", "--config", cfg, "--out", out]) == 0
    report = json.loads((out / "spectrum.json").read_text())
    assert report["metadata"]["metric"] == "sampled"


# --- split command ----------------------------------------------------------------


def test_cmd_split_search_flat_shell(tmp_path):
    cfg = write_config(tmp_path, seed=5, split={"lambda": 1.0, "attempts": 4})
    out = tmp_path / "out"
    assert run(["split", "--config", cfg, "--out", out]) == 0
    rep = json.loads((out / "split.json").read_text())
    assert rep["found"] and rep["m"] == 30
    assert rep["spread"] > 1e-6
    assert rep["max_deviation"] < 1e-5
    lines = (out / "branches.csv").read_text().splitlines()
    assert lines[0].startswith("eps,branch_0")
    assert len(lines) == 1 + 7          # eps grid with 0 inserted


def test_cmd_split_conformal_control(tmp_path):
    cfg = write_config(tmp_path, split={"lambda": 1.0,
                                        "direction": {"kind": "conformal"}})
    out = tmp_path / "out"
    assert run(["split", "--config", cfg, "--out", out]) == 0
    rep = json.loads((out / "split.json").read_text())
    assert rep["spread"] < 1e-9
    slopes = np.array(rep["predicted_slopes"])
    np.testing.assert_allclose(slopes, -0.5, atol=1e-9)


def test_cmd_split_spd_broken_is_clean_error(tmp_path):
    cfg = write_config(
        tmp_path, seed=5,
        split={"lambda": 1.0, "attempts": 4,
               "eps_grid": [-5.0, 5.0], "direction": {"kind": "search"},
               "scale": 1.0})
    out = tmp_path / "out"
    assert run(["split", "--config", cfg, "--out", out]) == 3


# --- sylvester command ----------------------------------------------------------------


def test_cmd_sylvester(tmp_path):
    cfg = write_config(
        tmp_path, seed=3,
        sylvester={"pairs": 40,
                   "density": {"grid": 5, "K": 2, "mask_axis": 0,
                               "mask_width": 3}})
    out = tmp_path / "out"
    assert run(["sylvester", "--config", cfg, "--out", out]) == 0
    rep = json.loads((out / "sylvester.json").read_text())
    assert rep["pairs"] == 40
    assert rep["max_relative_residual"] < 1e-9
    assert rep["max_kernel_asymmetry"] < 1e-8
    assert rep["max_kernel_pairing"] < 1e-10
    assert rep["kernel_dimensions"] == {"5": 40}
    assert rep["density"]["residual"] < 1e-8


def test_cmd_sylvester_vanishing_w_surfaced(tmp_path):
    cfg = write_config(
        tmp_path,
        sylvester={"pairs": 1,
                   "density": {"grid": 5, "K": 2, "mask_axis": 0,
                               "mask_width": 3, "w_dominant": 0.0,
                               "w_scale": 0.0}})
    out = tmp_path / "out"
    assert run(["sylvester", "--config", cfg, "--out", out]) == 2


# --- decompose / verify -----------------------------------------------------------------


def test_cmd_decompose(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert run(["decompose", "--config", cfg, "--out", out]) == 0
    rep = json.loads((out / "decompose.json").read_text())
    assert rep["harmonic_dimension"] == 10
    assert rep["idempotence_defect"] < 1e-9
    assert rep["orthogonality_defect"] < 1e-9
    assert rep["completeness_defect"] < 1e-9


def test_cmd_verify_flat(tmp_path):
    cfg = write_config(tmp_path, verify={"samples": 3, "pairs": 5})
    out = tmp_path / "out"
    assert run(["verify", "--config", cfg, "--out", out]) == 0
    rep = json.loads((out / "verify.json").read_text())
    assert rep["all_pass"]
    names = {c["name"] for c in rep["checks"]}
    assert "beltrami skew-adjointness" in names
    assert "harmonic dimension == 10" in names


def test_cmd_verify_constant_metric(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 5))
    m = (a @ a.T + 5 * np.eye(5)).tolist()
    cfg = write_config(tmp_path, metric={"kind": "constant", "matrix": m},
                       verify={"samples": 3, "pairs": 5})
    out = tmp_path / "out"
    assert run(["verify", "--config", cfg, "--out", out]) == 0


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path, seed=1,
                       sylvester={"pairs": 5, "density": None})
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run(["sylvester", "--config", cfg, "--out", out1,
                "--seed", "99"]) == 0
    rep = json.loads((out1 / "sylvester.json").read_text())
    assert rep["seed"] == 99
    assert run(["sylvester", "--config", cfg, "--out", out2]) == 0
    rep2 = json.loads((out2 / "sylvester.json").read_text())
    assert rep2["seed"] == 1


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("H5_THREADS", "1")
    cfg = write_config(tmp_path, sylvester={"pairs": 2, "density": None})
    assert run(["sylvester", "--config", cfg, "--out", tmp_path / "o"]) == 0
