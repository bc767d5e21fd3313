import json
from dataclasses import replace

import pytest

from burgerslab.cli import main
from burgerslab.exceptions import ConfigurationError
from burgerslab.harness import (
    EXIT_OK,
    EXIT_VALIDATION,
    ExperimentConfig,
    compare_series_rectangle,
    parse_initial_data,
    preset_config,
    preset_list,
    render_report,
    run_experiment,
    run_heat_oracle,
    run_kernel_checks,
    run_localization,
    run_spectral_calculus,
)


class TestPresets:
    def test_required_presets_present(self):
        names = preset_list()
        for required in ("noise-validate", "heat-oracle", "case1-exponents",
                         "case2-surface", "mass-bounds", "nonexplosion",
                         "kernel-checks", "localization-consistency"):
            assert required in names

    def test_stable_ordering(self):
        assert preset_list() == preset_list()

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            preset_config("no-such-thing")

    def test_preset_configs_validate(self):
        for name in ("heat-oracle", "case1-exponents", "case2-surface",
                     "mass-bounds", "nonexplosion", "localization-consistency"):
            preset_config(name).validate()


class TestConfigSerialization:
    def test_roundtrip(self):
        cfg = preset_config("case1-exponents")
        text = cfg.to_text()
        back = ExperimentConfig.from_text(text)
        assert back == cfg
        assert back.config_hash() == cfg.config_hash()

    def test_hash_ignores_output_location(self):
        cfg = preset_config("heat-oracle")
        moved = replace(cfg, out="elsewhere", threads=4)
        assert moved.config_hash() == cfg.config_hash()
        changed = replace(cfg, master_seed=1)
        assert changed.config_hash() != cfg.config_hash()

    def test_comments_and_aliases(self):
        cfg = ExperimentConfig.from_text(
            "preset = custom\n"
            "lambda = 0.5   # exponent of the gradient nonlinearity\n"
            "lambda0 = 0.25\n\n"
            "n_x = 64\n")
        assert cfg.lam == 0.5
        assert cfg.lam0 == 0.25
        assert cfg.n_x == 64

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown config key"):
            ExperimentConfig.from_text("frobnicate = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigurationError, match="bad value"):
            ExperimentConfig.from_text("n_x = lots\n")

    def test_initial_data_parsing(self):
        assert parse_initial_data("constant(0.5)").kind == "constant"
        bump = parse_initial_data("bump(height=2.0,center=1.0,width=0.5)")
        assert bump.params["height"] == 2.0
        with pytest.raises(ConfigurationError):
            parse_initial_data("wedge(1.0)")

    def test_grid_derives_time_steps(self):
        cfg = replace(preset_config("heat-oracle"), n_t=0)
        grid = cfg.grid()
        dx = (cfg.x_max - cfg.x_min) / cfg.n_x
        assert grid.n_t == int(pytest.approx(cfg.t_end / (0.25 * dx * dx), abs=1))

    def test_lambda0_validation_message(self):
        cfg = replace(preset_config("case2-surface"), lambda0_values=(),
                      lam0=0.6)
        with pytest.raises(ConfigurationError, match=r"\[0, 0.5\)"):
            cfg.validate()


class TestRunners:
    def test_heat_oracle_runner(self):
        res = run_heat_oracle(preset_config("heat-oracle"))
        assert res["rel_l2_error"] <= 1e-3

    def test_kernel_checks_runner(self):
        res = run_kernel_checks(preset_config("kernel-checks"))
        for val in res["integrals"].values():
            assert val == pytest.approx(1.0, abs=1e-6)
        assert abs(res["singularity_slope"] + 0.5) < 0.05
        assert res["square_integrability"]["0.25"]["converged"]
        assert not res["square_integrability"]["0.0"]["converged"]

    def test_spectral_calculus_runner(self):
        res = run_spectral_calculus(preset_config("spectral-calculus"))
        assert res["isometry_max_rel_error"] <= 1e-10
        assert res["multiplicative_violations"] == 0

    def test_series_rectangle_comparison_small(self):
        res = compare_series_rectangle(n_fields=1200, master_seed=3, n_x=32, n_t=32)
        assert res["max_abs_z"] < 5.0

    def test_localization_runner_small(self):
        cfg = replace(preset_config("localization-consistency"),
                      n_x=128, n_paths=4, t_end=0.25)
        res = run_localization(cfg)
        assert res["max_abs_difference"] <= 1e-10


class TestRunExperiment:
    def small_cfg(self, tmp_path):
        return replace(preset_config("heat-oracle"), out=str(tmp_path))

    def test_writes_artifacts_with_meta(self, tmp_path):
        cfg = self.small_cfg(tmp_path)
        assert run_experiment(cfg) == EXIT_OK
        artifact = tmp_path / "heat-oracle" / "heat-oracle.json"
        payload = json.loads(artifact.read_text())
        assert payload["meta"]["config_hash"] == cfg.config_hash()
        assert payload["meta"]["master_seed"] == cfg.master_seed
        assert "version" in payload["meta"]
        assert payload["results"]["rel_l2_error"] <= 1e-3
        assert (tmp_path / "heat-oracle" / "config.txt").exists()

    def test_rerun_reproduces_bytes_modulo_timestamp(self, tmp_path):
        cfg = self.small_cfg(tmp_path)
        run_experiment(cfg)
        first = json.loads((tmp_path / "heat-oracle" / "heat-oracle.json").read_text())
        run_experiment(cfg)
        second = json.loads((tmp_path / "heat-oracle" / "heat-oracle.json").read_text())
        first["meta"].pop("created_at")
        second["meta"].pop("created_at")
        assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)

    def test_validation_failure_exit_code(self, tmp_path):
        cfg = replace(preset_config("case2-surface"), out=str(tmp_path),
                      lambda0_values=(0.6,))
        assert run_experiment(cfg) == EXIT_VALIDATION

    def test_replayed_config_reproduces(self, tmp_path):
        cfg = self.small_cfg(tmp_path)
        run_experiment(cfg)
        replay = ExperimentConfig.from_file(tmp_path / "heat-oracle" / "config.txt")
        assert replay.config_hash() == cfg.config_hash()


class TestCli:
    def test_list(self, capsys):
        assert main(["list"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "case1-exponents" in out
        assert "mass-bounds" in out

    def test_validate_preset(self, capsys):
        assert main(["validate", "heat-oracle"]) == EXIT_OK
        assert "ok:" in capsys.readouterr().out

    def test_validate_malformed_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("preset = case2-surface\nlambda0 = 0.6\nlambda0_values =\n")
        assert main(["validate", str(bad)]) == EXIT_VALIDATION
        assert "[0, 0.5)" in capsys.readouterr().out

    def test_run_with_overrides(self, tmp_path, capsys):
        code = main(["run", "heat-oracle", "--out", str(tmp_path), "--seed", "3"])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "heat-oracle" / "heat-oracle.json").read_text())
        assert payload["meta"]["master_seed"] == 3

    def test_report_renders(self, tmp_path, capsys):
        main(["run", "heat-oracle", "--out", str(tmp_path)])
        assert main(["report", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "rel_l2_error" in out
        assert "config_hash" not in out or "hash=" in out

    def test_dump_trajectories_flag(self, tmp_path):
        code = main(["run", "heat-oracle", "--out", str(tmp_path),
                     "--dump-trajectories"])
        assert code == EXIT_OK
        csv_path = tmp_path / "heat-oracle" / "trajectory_path0.csv"
        assert csv_path.exists()
        assert csv_path.read_text().startswith("t,x,u")


def test_render_report_empty_dir(tmp_path):
    text = render_report(tmp_path)
    assert "no artifacts" in text
