"""Command-line interface: exit codes, artifacts, and manifest hygiene."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from omlc import io as io_mod
from omlc.cli import (
    EXIT_CONFIG,
    EXIT_DEGENERATE,
    EXIT_OK,
    main,
)

# weakly driven, heavily damped mechanics: no limit cycle, tiny truncation,
# direct steady-state solve in milliseconds
FAST = [
    "--set", "system.delta=0.0",
    "--set", "system.g0=0.05",
    "--set", "system.kappa=1.0",
    "--set", "system.gamma=0.1",
    "--set", "system.n_ph=0.5",
    "--set", "system.alpha_laser=0.2",
    "--set", "space.n_a=3",
    "--set", "space.n_b=6",
]

# self-oscillating parameters for the semiclassical stage only
CYCLE = [
    "--set", "system.delta=0.36",
    "--set", "system.g0=0.36",
    "--set", "system.kappa=1.5",
    "--set", "system.gamma=0.00125",
    "--set", "system.alpha_laser=0.3",
]


@pytest.fixture()
def runner():
    return CliRunner()


def _invoke(runner, tmp_path, args):
    return runner.invoke(main, ["--out", str(tmp_path), *args],
                         catch_exceptions=False)


class TestTopLevel:
    def test_help_lists_subcommands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == EXIT_OK
        for name in ("semiclassical", "steady", "trajectory", "ensemble",
                     "sweep", "wigner"):
            assert name in result.output

    def test_config_error_exits_1(self, runner, tmp_path):
        result = _invoke(runner, tmp_path,
                         ["--set", "campaign.m=0", "steady"])
        assert result.exit_code == EXIT_CONFIG
        assert "m must be >= 1" in result.output

    def test_missing_config_file_exits_1(self, runner, tmp_path):
        result = runner.invoke(
            main, ["--config", str(tmp_path / "absent.yaml"), "steady"])
        assert result.exit_code == EXIT_CONFIG
        assert "cannot read config" in result.output


class TestSemiclassical:
    def test_limit_cycle_run(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [*CYCLE, "semiclassical"])
        assert result.exit_code == EXIT_OK
        assert "B_ss=3.2" in result.output
        assert io_mod.validate_run_dir(tmp_path) == []
        sols = json.loads((tmp_path / "solutions.json").read_text())
        assert any(s["stable"] for s in sols["solutions"])

    def test_no_cycle_exits_degenerate(self, runner, tmp_path):
        args = [a.replace("delta=0.36", "delta=-0.36") for a in CYCLE]
        result = _invoke(runner, tmp_path, [*args, "semiclassical"])
        assert result.exit_code == EXIT_DEGENERATE
        assert "no stable limit cycle" in result.output


class TestSteady:
    def test_metrics_and_artifacts(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [*FAST, "steady"])
        assert result.exit_code == EXIT_OK
        assert "<n>=" in result.output
        payload = json.loads((tmp_path / "steady.json").read_text())
        for key in ("n_ss", "f_ss", "s_ss", "residual",
                    "residual_over_norm_bound", "truncation_tail_mech"):
            assert key in payload
        # mechanics is nearly thermal at n_ph=0.5: F close to 1 + n
        assert payload["f_ss"] == pytest.approx(1.5, abs=0.2)
        assert payload["residual_over_norm_bound"] < 1e-9
        assert io_mod.validate_run_dir(tmp_path) == []

    def test_dump_state_round_trip(self, runner, tmp_path):
        result = _invoke(runner, tmp_path,
                         [*FAST, "--set", "output.dump_state=true", "steady"])
        assert result.exit_code == EXIT_OK
        rho, n_a, n_b = io_mod.load_state(tmp_path / "steady_state.bin")
        assert (n_a, n_b) == (3, 6)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-9)
        assert io_mod.validate_run_dir(tmp_path) == []


class TestTrajectory:
    def test_static_unraveling(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [
            *FAST, "--set", "measurement.kind=none",
            "--set", "campaign.t_final=2.0", "trajectory"])
        assert result.exit_code == EXIT_OK
        assert "final <n>=" in result.output
        side = json.loads((tmp_path / "trajectory.json").read_text())
        assert side["kind"] == "none"
        assert io_mod.validate_run_dir(tmp_path) == []

    def test_homodyne_seed_flag(self, runner, tmp_path):
        result = runner.invoke(main, [
            "--out", str(tmp_path), "--seed", "99", *FAST,
            "--set", "campaign.t_final=1.0", "trajectory"],
            catch_exceptions=False)
        assert result.exit_code == EXIT_OK
        side = json.loads((tmp_path / "trajectory.json").read_text())
        assert side["seed"] == 99


class TestEnsemble:
    def test_summary_and_histogram(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [
            *FAST, "--set", "campaign.m=2",
            "--set", "campaign.t_final=2.0",
            "--set", "stepper.sample_stride=1", "ensemble"])
        assert result.exit_code == EXIT_OK
        assert "f_ss=" in result.output
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["m"] == 2
        assert len(summary["seeds"]) == 2
        assert "f_cond" in summary
        assert "decomposition" in summary
        series = (tmp_path / "ensemble_series.csv").read_text().splitlines()
        assert series[0].split(",") == io_mod.SERIES_HEADER
        assert (tmp_path / "trajectory_001.csv").exists()
        assert io_mod.validate_run_dir(tmp_path) == []

    def test_short_window_reports_histogram_error(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [
            *FAST, "--set", "campaign.m=1",
            "--set", "campaign.t_final=0.5",
            "--set", "campaign.t_start=0.45", "ensemble"])
        assert result.exit_code == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert "histogram_error" in summary
        assert "f_cond" not in summary


class TestSweep:
    def test_requires_grid(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [*FAST, "sweep"])
        assert result.exit_code == EXIT_CONFIG
        assert "sweep requires" in result.output

    def test_delta_grid_f_ss(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [
            *CYCLE, "--set", "space.n_a=3", "--set", "space.n_b=6",
            "--set", "sweep.delta=[0.36, 0.40]", "sweep"])
        assert result.exit_code == EXIT_OK
        assert "best f_ss=" in result.output
        table = (tmp_path / "sweep_table.csv").read_text().splitlines()
        assert len(table) == 3
        best = json.loads((tmp_path / "sweep_best.json").read_text())
        assert best["objective"] == "f_ss"
        assert best["config"]["system"]["delta"] in (0.36, 0.40)
        assert io_mod.validate_run_dir(tmp_path) == []

    def test_no_cycle_anywhere_exits_degenerate(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [
            *FAST, "--set", "sweep.delta=[0.0, 0.2]", "sweep"])
        assert result.exit_code == EXIT_DEGENERATE
        assert "no valid grid point" in result.output


class TestWigner:
    def test_steady_field(self, runner, tmp_path):
        result = _invoke(runner, tmp_path, [
            *FAST, "--set", "wigner.points=5",
            "--set", "wigner.extent=3.0", "wigner"])
        assert result.exit_code == EXIT_OK
        rows = (tmp_path / "wigner.csv").read_text().strip().splitlines()
        assert rows[0].split(",") == io_mod.WIGNER_HEADER
        assert len(rows) == 26
        # thermal-ish state: quasiprobability integrates to about one
        w = np.array([float(r.split(",")[2]) for r in rows[1:]])
        cell = (6.0 / 4) ** 2
        assert w.sum() * cell == pytest.approx(1.0, abs=0.15)
        assert io_mod.validate_run_dir(tmp_path) == []
