"""Config-driven front end: parsing, dispatch, artifacts, reproducibility."""

import hashlib
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from homoglab.cli import _scenario_catalog, main

ROOT3 = float(np.sqrt(3.0))
HALF_PI = 0.5 * math.pi

A_LAYERED = {
    "geometry": {"dimension": 1, "kind": "periodic-torus", "periods": [1.0]},
    "kind": "trig-polynomial",
    "terms": [[[0.0], 2.0, 0.0], [[1.0], 1.0, -HALF_PI]],
}


def run_cli(*args):
    return CliRunner().invoke(main, list(args))


def write_json(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def parabolic_cfg(**extra):
    cfg = {"kind": "parabolic", "operator": {"a": A_LAYERED, "p": 2.0},
           "eps": 0.125, "T": 0.05, "dt": 0.00125,
           "u0": {"kind": "sine", "amplitude": 1.0, "mode": 1}}
    cfg.update(extra)
    return cfg


class TestConfigValidation:

    def test_unknown_top_level_key_exits_2(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('kind = "mean-value"\nfields = []\nwrong = 1\n')
        res = run_cli("run", "--config", str(path))
        assert res.exit_code == 2
        assert "unknown key 'wrong'" in res.output
        # the message is anchored to the offending line
        assert "c.toml:3" in res.output

    def test_toml_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text('kind = "mean\n')
        res = run_cli("run", "--config", str(path))
        assert res.exit_code == 2
        assert "line 1" in res.output

    def test_json_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n "kind": ,\n}\n')
        res = run_cli("run", "--config", str(path))
        assert res.exit_code == 2
        assert "line 2" in res.output

    def test_unknown_experiment_kind(self, tmp_path):
        res = run_cli("run", "--config",
                      write_json(tmp_path, "c.json", {"kind": "frobnicate"}))
        assert res.exit_code == 2
        assert "unknown experiment kind" in res.output

    def test_missing_required_key(self, tmp_path):
        res = run_cli("run", "--config",
                      write_json(tmp_path, "c.json",
                                 {"kind": "cell", "xi": 1.0}))
        assert res.exit_code == 2
        assert "operator" in res.output

    def test_stray_key_inside_field_descriptor(self, tmp_path):
        bad = {"kind": "cell", "xi": 1.0,
               "operator": {"a": dict(A_LAYERED, typo=3), "p": 2.0}}
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", bad))
        assert res.exit_code == 2
        assert "typo" in res.output

    def test_stray_key_inside_geometry(self, tmp_path):
        geo = dict(A_LAYERED["geometry"], alpha=0.5)
        bad = {"kind": "cell", "xi": 1.0,
               "operator": {"a": dict(A_LAYERED, geometry=geo), "p": 2.0}}
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", bad))
        assert res.exit_code == 2
        assert "alpha" in res.output

    def test_wrong_value_type(self, tmp_path):
        cfg = parabolic_cfg(T="long")
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg))
        assert res.exit_code == 2
        assert "expected float" in res.output


class TestMeanValueRuns:

    def test_exact_trig_mean(self, tmp_path):
        cfg = {"kind": "mean-value",
               "fields": [{"name": "layered", "field": A_LAYERED,
                           "expect": 2.0, "tol": 1e-12}]}
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "means.json").read_text())
        assert doc["pass"] is True
        assert doc["entries"][0]["value"] == pytest.approx(2.0, abs=1e-14)
        header = (out / "means.csv").read_text().splitlines()[0]
        assert header.startswith("name,value,error_estimate")

    def test_failed_expectation_exits_1(self, tmp_path):
        cfg = {"kind": "mean-value",
               "fields": [{"name": "layered", "field": A_LAYERED,
                           "expect": 3.0, "tol": 1e-6}]}
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(tmp_path / "out"))
        assert res.exit_code == 1
        assert "[FAIL]" in res.output

    def test_threads_flag_is_recorded(self, tmp_path):
        cfg = {"kind": "mean-value",
               "fields": [{"name": "a", "field": A_LAYERED, "expect": 2.0,
                           "tol": 1e-9},
                          {"name": "b", "field": A_LAYERED, "expect": 2.0,
                           "tol": 1e-9}]}
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out), "--threads", "2")
        assert res.exit_code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["threads"] == 2


class TestModuleDispatch:

    def test_sigma_product_reaches_half(self, tmp_path):
        cfg = {"kind": "sigma-check", "check": "product",
               "sequences": ["pure-sin", "pure-sin"]}
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["limits"]["product"] == pytest.approx(0.5, abs=1e-12)

    def test_cell_oracle_matches_closed_form(self, tmp_path):
        cfg = {"kind": "cell", "xi": 1.0, "oracle": "closed-form",
               "operator": {"a": A_LAYERED, "p": 2.0}}
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "solution.json").read_text())
        assert doc["effective_flux"][0] == pytest.approx(ROOT3, abs=1e-6)
        assert doc["oracle_gap"] <= 1e-5

    def test_effective_model_artifacts(self, tmp_path):
        cfg = {"kind": "effective", "keep_correctors": True,
               "operator": {"a": A_LAYERED, "p": 2.0}}
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 0
        assert (out / "model.json").exists()
        assert (out / "model.bin").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert "model.bin" in manifest["artifacts"]

    def test_minimize_reports_energy_gap(self, tmp_path):
        cfg = {"kind": "minimize", "eps": 1.0 / 64.0, "load": 1.0,
               "homogenized_coefficient": ROOT3, "gap_max": 1e-2,
               "density": {"kind": "quadratic", "coefficient": A_LAYERED}}
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "result.json").read_text())
        assert doc["energy_gap"] <= 1e-2
        header = (out / "minimizer.csv").read_text().splitlines()[0]
        assert header == "x,u,u_hom"

    def test_parabolic_compare_within_bound(self, tmp_path):
        cfg = parabolic_cfg(solve="compare", error_max=0.005)
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "run.json").read_text())
        assert doc["l2_error"] <= 0.005

    def test_spde_noise_free_bitwise(self, tmp_path):
        cfg = parabolic_cfg(kind="spde", check_noise_free=True)
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "run.json").read_text())
        assert doc["noise_free_identical"] is True

    def test_blowup_exits_3_with_diagnostics(self, tmp_path):
        cfg = parabolic_cfg(forcing=1e9)
        out = tmp_path / "out"
        res = run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                      "--out", str(out))
        assert res.exit_code == 3
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["error"] == "NonConvergenceError"
        assert diag["diagnostics"]["aborted"] is True
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "diverged"


class TestArtifacts:

    def test_manifest_hashes_every_artifact(self, tmp_path):
        cfg = {"kind": "cell", "xi": 1.0,
               "operator": {"a": A_LAYERED, "p": 2.0}}
        out = tmp_path / "out"
        run_cli("run", "--config", write_json(tmp_path, "c.json", cfg),
                "--out", str(out))
        manifest = json.loads((out / "manifest.json").read_text())
        files = {p.name for p in out.iterdir()} - {"manifest.json"}
        assert set(manifest["artifacts"]) == files
        for name, entry in manifest["artifacts"].items():
            blob = (out / name).read_bytes()
            assert hashlib.sha256(blob).hexdigest() == entry["sha256"]
            assert entry["bytes"] == len(blob)
        for key in ("config_hash", "seed", "versions", "status"):
            assert key in manifest

    def test_same_seed_byte_identical_csv(self, tmp_path):
        cfg = {"kind": "study", "family": "spde", "seed": 11,
               "eps": [0.125, 0.0625], "trials": 8,
               "scenario": {
                   "operator": {"a": A_LAYERED, "p": 2.0},
                   "T": 0.05, "dt": 0.0025,
                   "u0": {"kind": "sine", "amplitude": 1.0, "mode": 1},
                   "noise": {"kind": "multiplicative", "sigma": 0.3,
                             "modulation": 0.5, "lipschitz": 0.45},
                   "noise_hom": {"kind": "multiplicative", "sigma": 0.3,
                                 "modulation": 0.0, "lipschitz": 0.3}}}
        path = write_json(tmp_path, "c.json", cfg)
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert run_cli("run", "--config", path, "--out",
                       str(a)).exit_code == 0
        assert run_cli("run", "--config", path, "--out",
                       str(b)).exit_code == 0
        assert (a / "study.csv").read_bytes() == (b / "study.csv").read_bytes()
        ma = json.loads((a / "manifest.json").read_text())
        mb = json.loads((b / "manifest.json").read_text())
        assert ma["config_hash"] == mb["config_hash"]
        assert ma["artifacts"]["study.csv"] == mb["artifacts"]["study.csv"]
        run_cli("run", "--config", path, "--seed", "12", "--out", str(c))
        assert (a / "study.csv").read_bytes() != \
            (c / "study.csv").read_bytes()


class TestScenarioCatalog:

    def test_catalog_covers_four_families(self):
        catalog = _scenario_catalog()
        assert len(catalog) >= 4
        assert "periodic-1d-linear" in catalog
        assert "quasiperiodic-mean-value" in catalog
        assert "slow-oscillation-elliptic" in catalog
        surrogate = catalog["weak-almost-periodic-surrogate"]
        assert "surrogate" in surrogate["config"]["note"]

    def test_list_examples_prints_catalog(self):
        res = run_cli("list-examples")
        assert res.exit_code == 0
        for name in _scenario_catalog():
            assert name in res.output

    def test_configs_round_trip(self, tmp_path):
        res = run_cli("list-examples", "--out", str(tmp_path))
        assert res.exit_code == 0
        for name in _scenario_catalog():
            text = (tmp_path / f"{name}.json").read_text()
            once = json.loads(text)
            again = json.loads(json.dumps(once, indent=1, sort_keys=True))
            assert once == again

    def test_periodic_scenario_end_to_end(self, tmp_path):
        run_cli("list-examples", "--out", str(tmp_path))
        out = tmp_path / "out"
        res = run_cli("run", "--config",
                      str(tmp_path / "periodic-1d-linear.json"),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "study.json").read_text())
        errs = np.asarray(doc["errors"])[:, 0]
        assert np.all(np.diff(errs) < 0)

    def test_slow_oscillation_scenario_end_to_end(self, tmp_path):
        run_cli("list-examples", "--out", str(tmp_path))
        out = tmp_path / "out"
        res = run_cli("run", "--config",
                      str(tmp_path / "slow-oscillation-elliptic.json"),
                      "--out", str(out))
        assert res.exit_code == 0
        doc = json.loads((out / "study.json").read_text())
        gaps = np.asarray(doc["energy_gaps"])
        assert np.all(np.diff(gaps) < 0)
        assert gaps[-1] <= 1e-2
