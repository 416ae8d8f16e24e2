import json

import pytest

from wglasso.cli import DEFAULTS, load_config, main, merge_config
from wglasso.errors import ConfigError

QUICK_GEOMETRY = {
    "electrode_count": 24,
    "true_grid_size": 40,
    "inverse_grid_size": 40,
}


def write_config(tmp_path, extra):
    cfg = {"geometry": QUICK_GEOMETRY}
    for key, value in extra.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfig:
    def test_defaults_complete(self):
        cfg = load_config(None)
        assert cfg["geometry"]["electrode_count"] == 64
        assert cfg["morozov"]["tau"] == 1.05

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key: 'typo'"):
            merge_config({"typo": 1})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError, match="geometry.radius"):
            merge_config({"geometry": {"radius": 80}})

    def test_override_preserved(self):
        cfg = merge_config({"experiment": {"trials": 7}})
        assert cfg["experiment"]["trials"] == 7
        assert cfg["experiment"]["noise_level"] == DEFAULTS["experiment"]["noise_level"]


class TestGenerate:
    def test_writes_five_files(self, tmp_path):
        cfg = write_config(tmp_path, {})
        out = tmp_path / "data"
        assert main(["--config", cfg, "--seed", "3", "generate", "--out-dir", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "geometry.json",
            "leadfield_inverse.bin",
            "leadfield_inverse.json",
            "leadfield_true.bin",
            "leadfield_true.json",
        ]
        doc = json.loads((out / "geometry.json").read_text())
        assert doc["seed"] == 3
        assert doc["config"]["geometry"]["electrode_count"] == 24

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, {})
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["--config", cfg, "--seed", "3", "generate", "--out-dir", str(out1)])
        main(["--config", cfg, "--seed", "3", "generate", "--out-dir", str(out2)])
        assert (out1 / "leadfield_true.bin").read_bytes() == (out2 / "leadfield_true.bin").read_bytes()
        assert (out1 / "geometry.json").read_text() == (out2 / "geometry.json").read_text()

    def test_validation_error_exit_2(self, tmp_path):
        cfg = write_config(tmp_path, {})
        assert main(["--config", cfg, "generate", "--out-dir", str(tmp_path / "x"),
                     "--electrodes", "3"]) == 2

    def test_provenance_round_trip(self, tmp_path):
        # the embedded config must reproduce the file it came from
        cfg = write_config(tmp_path, {})
        out1 = tmp_path / "first"
        main(["--config", cfg, "--seed", "9", "generate", "--out-dir", str(out1)])
        embedded = json.loads((out1 / "geometry.json").read_text())["config"]
        replay_cfg = tmp_path / "replay.json"
        replay_cfg.write_text(json.dumps(embedded))
        out2 = tmp_path / "second"
        main(["--config", str(replay_cfg), "generate", "--out-dir", str(out2)])
        assert (out1 / "geometry.json").read_bytes() == (out2 / "geometry.json").read_bytes()
        assert (out1 / "leadfield_inverse.bin").read_bytes() == (out2 / "leadfield_inverse.bin").read_bytes()


class TestSolve:
    @pytest.fixture()
    def data_dir(self, tmp_path):
        cfg = write_config(tmp_path, {})
        out = tmp_path / "data"
        main(["--config", cfg, "--seed", "3", "generate", "--out-dir", str(out)])
        return out, cfg

    def test_missing_data_exit_3(self, tmp_path):
        cfg = write_config(tmp_path, {})
        assert main(["--config", cfg, "solve", "--data-dir", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "r.json")]) == 3

    def test_fixed_alpha_above_max_gives_zero(self, data_dir, tmp_path):
        out_dir, cfg = data_dir
        result_path = tmp_path / "r.json"
        assert main(["--config", cfg, "--seed", "4", "solve", "--data-dir", str(out_dir),
                     "--out", str(result_path), "--alpha", "1e12", "--kind", "identity"]) == 0
        doc = json.loads(result_path.read_text())
        assert not any(doc["result"]["x"])
        assert doc["result"]["converged"]

    def test_morozov_solve_writes_bracket_info(self, data_dir, tmp_path):
        out_dir, cfg = data_dir
        result_path = tmp_path / "m.json"
        assert main(["--config", cfg, "--seed", "5", "solve", "--data-dir", str(out_dir),
                     "--out", str(result_path), "--kind", "identity"]) == 0
        doc = json.loads(result_path.read_text())
        assert doc["morozov"]["alpha"] > 0
        assert doc["measurement"]["source"] == "simulated"
        if doc["morozov"]["bracketed"]:
            disc = doc["result"]["discrepancy_original"]
            delta = doc["morozov"]["delta"]
            assert delta <= disc <= doc["morozov"]["tau"] * delta

    def test_identity_and_truncated_give_distinct_results(self, data_dir, tmp_path):
        out_dir, cfg = data_dir
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["--config", cfg, "--seed", "6", "solve", "--data-dir", str(out_dir),
              "--out", str(a), "--kind", "identity"])
        main(["--config", cfg, "--seed", "6", "solve", "--data-dir", str(out_dir),
              "--out", str(b), "--kind", "truncated_pseudoinverse", "--k", "12"])
        da, db = json.loads(a.read_text()), json.loads(b.read_text())
        assert da["weighting"] == {"kind": "identity", "k": None}
        assert db["weighting"] == {"kind": "truncated_pseudoinverse", "k": 12}
        assert da["result"]["x"] != db["result"]["x"]


class TestVerify:
    def test_quick_suite_exit_0(self, tmp_path):
        out = tmp_path / "verify.json"
        assert main(["--seed", "0", "verify", "--out", str(out), "--instances", "2"]) == 0
        doc = json.loads(out.read_text())
        assert doc["counts"]["fail"] == 0
        assert len(doc["reports"]) == 6

    def test_failing_suite_exit_4(self, monkeypatch, tmp_path):
        from wglasso.theory import TheoremReport
        import wglasso.cli as cli

        fail = TheoremReport("gamma_scaling", {}, (), "fail", {"max_deviation": 1.0})
        ok = TheoremReport("gamma_scaling", {}, (), "pass", {"max_deviation": 0.0})
        monkeypatch.setattr(cli, "default_verification_suite", lambda **kw: [ok, fail])
        assert main(["verify", "--out", str(tmp_path / "v.json")]) == 4

    def test_not_applicable_does_not_fail_suite(self, monkeypatch, tmp_path):
        from wglasso.theory import TheoremReport
        import wglasso.cli as cli

        info = TheoremReport("single_group_pursuit", {}, (), "not_applicable", {})
        ok = TheoremReport("single_group_pursuit", {}, (), "pass", {})
        monkeypatch.setattr(cli, "default_verification_suite", lambda **kw: [ok, info])
        assert main(["verify", "--out", str(tmp_path / "v.json")]) == 0


class TestExperiment:
    def test_tiny_run_writes_files(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"experiment": {"trials": 1}, "solver": {"tol_objective": 1e-8, "tol_x": 1e-6}},
        )
        out = tmp_path / "exp"
        assert main(["--config", cfg, "--seed", "2", "experiment", "--out-dir", str(out)]) == 0
        report = json.loads((out / "experiment_report.json").read_text())
        csv_lines = (out / "experiment_rows.csv").read_text().splitlines()
        assert report["master_seed"] == 2
        assert report["cli_config"]["experiment"]["trials"] == 1
        assert csv_lines[0].startswith("trial,weighting,")
        assert len(csv_lines) == 1 + len(report["rows"])

    def test_rerun_reproduces_files(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"experiment": {"trials": 1}, "solver": {"tol_objective": 1e-8, "tol_x": 1e-6}},
        )
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        main(["--config", cfg, "--seed", "2", "experiment", "--out-dir", str(out1)])
        main(["--config", cfg, "--seed", "2", "experiment", "--out-dir", str(out2)])
        assert (out1 / "experiment_rows.csv").read_bytes() == (out2 / "experiment_rows.csv").read_bytes()
        assert (out1 / "experiment_report.json").read_bytes() == (out2 / "experiment_report.json").read_bytes()
