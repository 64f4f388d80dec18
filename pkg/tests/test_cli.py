"""Tests for the ipp command line."""

import json

import pytest

from projectile_ipp.cli import build_parser, main
from projectile_ipp.scenario import dump_scenario


@pytest.fixture
def ballistic_file(tmp_path, ballistic):
    path = tmp_path / "ballistic.json"
    path.write_text(dump_scenario(ballistic))
    return path


def run(*argv) -> int:
    return main([str(a) for a in argv])


class TestArguments:
    """Tests for argument parsing and usage errors."""

    def test_defaults(self):
        """Test default seed, output directory and ensemble sizes."""
        args = build_parser().parse_args(["montecarlo"])
        assert args.seed == 0
        assert args.runs == 1000
        assert str(args.out) == "out"
        assert build_parser().parse_args(["control"]).runs == 500

    def test_hex_seed(self):
        """Test seeds accept any integer literal up to 2^64 - 1."""
        args = build_parser().parse_args(["simulate", "--seed", "0xffffffffffffffff"])
        assert args.seed == 2**64 - 1

    def test_usage_errors_exit_2(self, tmp_path):
        """Test bad arguments exit with status 2."""
        assert run("unknown") == 2
        assert run("simulate", "--seed", "-1") == 2
        assert run("simulate", "--step", "0") == 2
        assert run("montecarlo", "--runs", "1", "--out", tmp_path / "o") == 2
        assert not (tmp_path / "o").exists()

    def test_bad_scenario_exits_2(self, tmp_path, capsys):
        """Test an invalid scenario exits 2 before creating outputs."""
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"projectile": {"D": -1}}))
        out = tmp_path / "out"
        assert run("simulate", "--scenario", bad, "--out", out) == 2
        assert not out.exists()
        assert "invalid scenario" in capsys.readouterr().err

    def test_control_without_canards_exits_2(self, tmp_path, ballistic_file):
        """Test control refuses a scenario lacking canards."""
        out = tmp_path / "out"
        assert run("control", "--scenario", ballistic_file, "--out", out) == 2
        assert not out.exists()


class TestCommands:
    """Tests for subcommand outputs."""

    def test_simulate_is_reproducible(self, tmp_path, ballistic_file):
        """Test the same seed writes byte-identical trajectories."""
        first, second = tmp_path / "a", tmp_path / "b"
        for out in (first, second):
            code = run("simulate", "--scenario", ballistic_file, "--seed", 5,
                       "--random-ic", "--out", out)  # fmt: skip
            assert code == 0
        data = (first / "trajectory.csv").read_bytes()
        assert data == (second / "trajectory.csv").read_bytes()
        report = json.loads((first / "report.json").read_text())
        assert report["command"] == "simulate"
        assert report["counts"]["impacts"] == 1
        assert report["outputs"] == ["trajectory.csv", "report.json"]

    def test_deterministic_ignores_seed(self, tmp_path, ballistic_file):
        """Test --deterministic removes every seed dependence."""
        for seed, name in ((1, "a"), (2, "b")):
            run("simulate", "--scenario", ballistic_file, "--deterministic",
                "--seed", seed, "--out", tmp_path / name)  # fmt: skip
        assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (
            tmp_path / "b" / "trajectory.csv"
        ).read_bytes()

    def test_step_override(self, tmp_path, ballistic_file):
        """Test --step changes the number of recorded samples."""
        run("simulate", "--scenario", ballistic_file, "--out", tmp_path / "fine")
        run("simulate", "--scenario", ballistic_file, "--step", 4,
            "--out", tmp_path / "coarse")  # fmt: skip
        fine = (tmp_path / "fine" / "trajectory.csv").read_text().splitlines()
        coarse = (tmp_path / "coarse" / "trajectory.csv").read_text().splitlines()
        assert len(coarse) < len(fine)

    def test_montecarlo_outputs(self, tmp_path, ballistic_file, capsys):
        """Test the ensemble writes impacts, a plot and a report."""
        out = tmp_path / "mc"
        code = run("montecarlo", "--scenario", ballistic_file, "--runs", 20,
                   "--seed", 3, "--out", out)  # fmt: skip
        assert code == 0
        lines = (out / "impacts.csv").read_text().splitlines()
        assert lines[0] == "run,tau,x,y"
        assert len(lines) == 21
        assert (out / "montecarlo.svg").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["counts"]["runs"] == 20
        assert report["counts"]["markers"] == 20
        assert report["stats"][0]["method"] == "montecarlo"
        assert "RUN REPORT" in capsys.readouterr().out

    def test_moments_outputs(self, tmp_path, ballistic_file):
        """Test the moment command writes its history and prediction."""
        out = tmp_path / "mf"
        assert run("moments", "--scenario", ballistic_file, "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["stats"][0]["method"] == "moments"
        assert report["metrics"]["impact_tau"] > 0
        assert (out / "moments.csv").exists()

    def test_compare_outputs(self, tmp_path, ballistic_file):
        """Test the comparison records both methods and their gaps."""
        out = tmp_path / "cmp"
        code = run("compare", "--scenario", ballistic_file, "--runs", 30,
                   "--speed-closure", "mean", "--out", out)  # fmt: skip
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert [b["method"] for b in report["stats"]] == ["montecarlo", "moments"]
        assert {"mean_x_gap", "sd_x_gap"} <= set(report["metrics"])
        assert (out / "compare.svg").exists()

    def test_model_error_exits_1(self, tmp_path, ballistic_factory):
        """Test a moment run that never lands exits 1."""
        scenario = ballistic_factory(integration={"max_span": 500.0})
        path = tmp_path / "short.json"
        path.write_text(dump_scenario(scenario))
        assert run("moments", "--scenario", path, "--out", tmp_path / "o") == 1

    def test_control_outputs(self, tmp_path, nominal_payload, capsys, monkeypatch):
        """Test paired ensembles write plots, logs and identical tables for
        any worker count."""
        nominal_payload["integration"].update(max_span=200.0)
        nominal_payload["initial"]["z"] = {"mean": -10.0}
        nominal_payload["initial"]["theta"] = {"mean": -0.3, "sd": 0.017}
        for name in ("phi", "p", "q", "r"):
            nominal_payload["initial"][name] = {"mean": 0.0}
        path = tmp_path / "dive.json"
        path.write_text(json.dumps(nominal_payload))

        for threads in ("1", "4"):
            monkeypatch.setenv("IPP_THREADS", threads)
            code = run("control", "--scenario", path, "--runs", 6, "--seed", 8,
                       "--out", tmp_path / threads)  # fmt: skip
            assert code == 0
        printed = capsys.readouterr().out
        assert "trace ratio (controlled / uncontrolled):" in printed

        one, four = tmp_path / "1", tmp_path / "4"
        assert (one / "control.svg").read_text().lstrip().startswith("<?xml")
        log = (one / "control_log.csv").read_text().splitlines()
        assert log[0].split(",")[0] == "tau"
        assert len(log) > 2
        for name in ("impacts_controlled.csv", "impacts_uncontrolled.csv",
                     "control_log.csv", "desired_trajectory.csv"):  # fmt: skip
            assert (one / name).read_bytes() == (four / name).read_bytes()
        report = json.loads((one / "report.json").read_text())
        assert report["metrics"]["trace_ratio"] > 0
        assert report["metrics"]["runtime_control_s"] >= 0
        assert report["counts"]["runs"] == 6
