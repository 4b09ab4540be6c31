"""End-to-end tests of the command line

Each test runs a full experiment on a coarse grid through the ``bjs`` entry point.
"""
import dataclasses

import pytest
from click.testing import CliRunner

from src import __version__
from src.config import save_config
from src.main import cli
from src.models import DomainError
from src.tools import experiments
from tests.conftest import PROJECT_ROOT
from tests.fixtures.sample_data import TestDataFactory

TINY = ["--n", "16", "--dt", "0.01", "--reps", "2"]


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.chdir(PROJECT_ROOT)
    return CliRunner()


@pytest.mark.e2e
class TestExperimentCommands:
    """Test experiment subcommands from arguments to artifacts"""

    def test_burgers(self, runner, temp_dir):
        """Test a Burgers run writes its tables, fields, report and manifest"""
        result = runner.invoke(cli, ["--out", str(temp_dir), "burgers", *TINY, "--T", "0.5", "--theta", "0,0.5"])
        assert result.exit_code == 0, result.output
        for name in ("burgers_reps.csv", "burgers_aggregates.csv", "burgers_report.md", "manifest.json"):
            assert (temp_dir / name).exists()
        assert (temp_dir / "fields" / "u_theta0.5_rep1.csv").exists()
        assert "artifacts written" in result.output

    def test_ofos(self, runner, temp_dir):
        """Test the gap experiment with its rate fit"""
        args = ["--out", str(temp_dir), "ofos", *TINY, "--T1-list", "0.1,0.2,0.3", "--T2", "0.5"]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.output
        assert (temp_dir / "ofos_rate_fit.csv").exists()
        assert (temp_dir / "ofos_gaps.svg").exists()

    def test_reproducible(self, runner, temp_dir):
        """Test equal seeds give byte-identical replicate tables"""
        for out in ("first", "second"):
            args = ["--out", str(temp_dir / out), "burgers", *TINY, "--T", "0.5", "--seed", "5"]
            assert runner.invoke(cli, args).exit_code == 0
        first = (temp_dir / "first" / "burgers_reps.csv").read_bytes()
        assert first == (temp_dir / "second" / "burgers_reps.csv").read_bytes()

    def test_workers_do_not_change_results(self, runner, temp_dir):
        """Test parallel replicates reproduce the serial run"""
        for threads in ("1", "2"):
            args = ["--out", str(temp_dir / threads), "--threads", threads, "burgers", *TINY, "--T", "0.5"]
            assert runner.invoke(cli, args).exit_code == 0
        serial = (temp_dir / "1" / "burgers_reps.csv").read_bytes()
        assert serial == (temp_dir / "2" / "burgers_reps.csv").read_bytes()

    def test_interrupted_run_resumes(self, runner, temp_dir, monkeypatch):
        """Test a run that dies mid-way resumes from its dumps and matches an uninterrupted run"""
        original = experiments.REGISTRY["burgers"]
        calls = []

        def dies_at_rep_one(config, rep):
            if rep == 1:
                raise DomainError("interrupted")
            return original.replicate(config, rep)

        def counting(config, rep):
            calls.append(rep)
            return original.replicate(config, rep)

        args = ["burgers", *TINY[:-1], "3", "--T", "0.5"]
        monkeypatch.setitem(experiments.REGISTRY, "burgers", dataclasses.replace(original, replicate=dies_at_rep_one))
        result = runner.invoke(cli, ["--threads", "1", "--out", str(temp_dir / "resumed"), *args])
        assert result.exit_code == 1
        assert not (temp_dir / "resumed" / "burgers_reps.csv").exists()

        monkeypatch.setitem(experiments.REGISTRY, "burgers", dataclasses.replace(original, replicate=counting))
        result = runner.invoke(cli, ["--threads", "1", "--out", str(temp_dir / "resumed"), "--resume", *args])
        assert result.exit_code == 0, result.output
        assert calls == [1, 2]

        monkeypatch.setitem(experiments.REGISTRY, "burgers", original)
        assert runner.invoke(cli, ["--out", str(temp_dir / "fresh"), *args]).exit_code == 0
        for name in ("burgers_reps.csv", "fields/u_theta0_rep0.csv", "fields/u_theta0_rep0.bjsf"):
            assert (temp_dir / "resumed" / name).read_bytes() == (temp_dir / "fresh" / name).read_bytes()


@pytest.mark.e2e
class TestConfigurationAndReports:
    """Test configuration files, errors and report re-rendering"""

    def test_config_file(self, runner, temp_dir):
        """Test a configuration file drives the run"""
        config = TestDataFactory.create_config("forgetting", horizons="0.1, 0.2")
        path = save_config(config, temp_dir / "forgetting.ini")
        result = runner.invoke(cli, ["--config", str(path), "--out", str(temp_dir / "out"), "forgetting"])
        assert result.exit_code == 0, result.output
        assert (temp_dir / "out" / "forgetting_reps.csv").exists()

    def test_config_for_other_experiment(self, runner, temp_dir):
        """Test a configuration naming another experiment is refused"""
        path = save_config(TestDataFactory.create_config("ofos"), temp_dir / "ofos.ini")
        result = runner.invoke(cli, ["--config", str(path), "--out", str(temp_dir), "burgers"])
        assert result.exit_code == 1
        assert "ConfigError" in result.output

    def test_invalid_override(self, runner, temp_dir):
        """Test out-of-range options fail cleanly"""
        result = runner.invoke(cli, ["--out", str(temp_dir), "burgers", "--n", "4"])
        assert result.exit_code == 1

    def test_report_rerender(self, runner, temp_dir):
        """Test the report command rebuilds a deleted report"""
        args = ["--out", str(temp_dir), "burgers", *TINY, "--T", "0.5"]
        assert runner.invoke(cli, args).exit_code == 0
        original = (temp_dir / "burgers_report.md").read_text()
        (temp_dir / "burgers_report.md").unlink()
        result = runner.invoke(cli, ["--out", str(temp_dir), "report", "burgers"])
        assert result.exit_code == 0, result.output
        assert (temp_dir / "burgers_report.md").read_text() == original

    def test_report_without_run(self, runner, temp_dir):
        """Test re-rendering a run that never happened"""
        result = runner.invoke(cli, ["--out", str(temp_dir), "report", "mixing"])
        assert result.exit_code == 1

    def test_version(self, runner):
        """Test the version option"""
        result = runner.invoke(cli, ["--version"])
        assert __version__ in result.output
