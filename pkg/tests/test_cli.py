"""
Tests for the hydrosplit command-line interface.
"""

import csv
import json

import pytest

from hydrosplit import __version__
from hydrosplit.cli import main
from hydrosplit.config import RunConfig, parse_config
from hydrosplit.exceptions import EigSolverStalled

SMALL = {
    "mesh": {"target_h": 0.5, "layers": 2},
    "scheme": {"T": 0.1, "M": 2},
    "study": {"levels": [0, 1], "coupling": "k_eq_h"},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL), encoding="utf-8")
    return path


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestArguments:
    """Test option handling without running a command."""

    def test_print_config(self, capsys):
        """Test --print-config prints the full default document."""
        assert main(["--print-config"]) == 0
        out = capsys.readouterr().out
        assert parse_config(out) == RunConfig()

    def test_print_config_merges_file(self, small_config, capsys):
        """Test printed configs include values from --config."""
        assert main(["--config", str(small_config), "--print-config"]) == 0
        assert json.loads(capsys.readouterr().out)["mesh"]["layers"] == 2

    def test_version(self, capsys):
        """Test --version reports the package version."""
        with pytest.raises(SystemExit) as exc_info:
            main(["--version"])
        assert exc_info.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_command_required(self):
        """Test a missing command is a usage error."""
        with pytest.raises(SystemExit) as exc_info:
            main([])
        assert exc_info.value.code == 2

    def test_workers_positive(self):
        """Test --workers 0 is refused."""
        with pytest.raises(SystemExit):
            main(["--workers", "0", "mesh"])


class TestExitCodes:
    """Test error reporting and exit codes."""

    def test_malformed_config(self, tmp_path, capsys):
        """Test a JSON syntax error exits with 2 and one stderr line."""
        path = tmp_path / "bad.json"
        path.write_text('{"mesh": }', encoding="utf-8")
        assert main(["--config", str(path), "mesh"]) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert err[-1].startswith("hydrosplit: error:")
        assert "line 1" in err[-1]

    def test_unknown_key(self, tmp_path):
        """Test schema violations exit with 2."""
        path = tmp_path / "bad.json"
        path.write_text('{"mesh": {"size": 1}}', encoding="utf-8")
        assert main(["--config", str(path), "mesh"]) == 2

    def test_numerical_failure(self, small_config, tmp_path, mocker):
        """Test solver failures exit with 3."""
        mocker.patch("hydrosplit.cli.compute_infsup", side_effect=EigSolverStalled(5, 0.1))
        assert main(["--config", str(small_config), "--out", str(tmp_path / "o"), "infsup"]) == 3

    def test_unexpected_failure(self, small_config, tmp_path, mocker):
        """Test foreign exceptions exit with 1."""
        mocker.patch.dict("hydrosplit.cli.COMMANDS", {"mesh": mocker.Mock(side_effect=RuntimeError("boom"))})
        assert main(["--config", str(small_config), "--out", str(tmp_path), "mesh"]) == 1


class TestSeed:
    """Test seed precedence."""

    @pytest.fixture
    def infsup(self, mocker):
        cmd = mocker.Mock(return_value={})
        mocker.patch.dict("hydrosplit.cli.COMMANDS", {"infsup": cmd})
        return cmd

    def test_flag_wins(self, infsup, tmp_path, monkeypatch):
        """Test --seed beats the config and the environment."""
        monkeypatch.setenv("HYDROSPLIT_SEED", "9")
        path = tmp_path / "c.json"
        path.write_text('{"seed": 7}')
        main(["--config", str(path), "--seed", "5", "--out", str(tmp_path), "infsup"])
        assert infsup.call_args.kwargs["seed"] == 5

    def test_config_beats_environment(self, infsup, tmp_path, monkeypatch):
        """Test config.seed beats HYDROSPLIT_SEED."""
        monkeypatch.setenv("HYDROSPLIT_SEED", "9")
        path = tmp_path / "c.json"
        path.write_text('{"seed": 7}')
        main(["--config", str(path), "--out", str(tmp_path), "infsup"])
        assert infsup.call_args.kwargs["seed"] == 7

    def test_environment_then_zero(self, infsup, tmp_path, monkeypatch):
        """Test HYDROSPLIT_SEED applies when nothing else is set, else 0."""
        monkeypatch.setenv("HYDROSPLIT_SEED", "9")
        main(["--out", str(tmp_path), "infsup"])
        assert infsup.call_args.kwargs["seed"] == 9
        monkeypatch.delenv("HYDROSPLIT_SEED")
        main(["--out", str(tmp_path), "infsup"])
        assert infsup.call_args.kwargs["seed"] == 0

    @pytest.mark.parametrize("command", ["mesh", "run", "converge"])
    def test_unseeded_commands(self, command, tmp_path, mocker):
        """Test commands that draw no random numbers are not handed a seed."""
        cmd = mocker.Mock(return_value={})
        mocker.patch.dict("hydrosplit.cli.COMMANDS", {command: cmd})
        assert main(["--seed", "5", "--out", str(tmp_path), command]) == 0
        assert "seed" not in cmd.call_args.kwargs

    def test_bad_environment(self, infsup, tmp_path, monkeypatch):
        """Test a non-integer HYDROSPLIT_SEED exits with 2."""
        monkeypatch.setenv("HYDROSPLIT_SEED", "abc")
        assert main(["--out", str(tmp_path), "infsup"]) == 2


class TestCommands:
    """Test each subcommand end to end on small meshes."""

    def test_mesh(self, small_config, tmp_path):
        """Test mesh writes the column mesh dump."""
        out = tmp_path / "out"
        assert main(["--config", str(small_config), "--out", str(out), "mesh"]) == 0
        text = (out / "mesh.txt").read_text()
        assert "TETS 48" in text and "NODES 27" in text

    def test_run(self, tmp_path):
        """Test run writes the ledger, final fields and checkpoints."""
        doc = dict(SMALL, outputs={"checkpoints": 1})
        path = tmp_path / "run.json"
        path.write_text(json.dumps(doc))
        out = tmp_path / "out"
        assert main(["--config", str(path), "--out", str(out), "-q", "run"]) == 0
        ledger = _csv(out / "ledger.csv")
        assert ledger[0] == ["m", "t", "u_l2", "u_h1", "p_l2", "div_norm", "energy_residual"]
        assert len(ledger) == 4
        assert (out / "fields" / "u.csv").exists() and (out / "fields" / "p.csv").exists()
        assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [
            "step_000000",
            "step_000001",
            "step_000002",
        ]

    def test_run_non_rectangle(self, tmp_path):
        """Test a non-rectangular surface is an input error."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"domain": {"polygon": [[0, 0], [1, 0], [0, 1]]}}))
        assert main(["--config", str(path), "--out", str(tmp_path / "o"), "run"]) == 2

    def test_run_nodal_depth(self, tmp_path):
        """Test run refuses a nodal bathymetry since its data are manufactured."""
        grid = [[1.0, 1.0, 1.0], [1.0, 1.5, 1.0], [1.0, 1.0, 1.0]]
        path = tmp_path / "run.json"
        path.write_text(json.dumps(dict(SMALL, domain={"depth": {"grid": grid}})))
        assert main(["--config", str(path), "--out", str(tmp_path / "o"), "run"]) == 2

    def test_mesh_nodal_depth(self, tmp_path):
        """Test mesh accepts a nodal bathymetry."""
        grid = [[1.0, 1.0, 1.0], [1.0, 1.5, 1.0], [1.0, 1.0, 1.0]]
        path = tmp_path / "run.json"
        path.write_text(json.dumps(dict(SMALL, domain={"depth": {"grid": grid}})))
        out = tmp_path / "o"
        assert main(["--config", str(path), "--out", str(out), "mesh"]) == 0
        assert (out / "mesh.txt").exists()

    def test_infsup(self, small_config, tmp_path):
        """Test infsup writes one row per study level."""
        out = tmp_path / "out"
        assert main(["--config", str(small_config), "--out", str(out), "infsup"]) == 0
        rows = _csv(out / "infsup.csv")
        assert rows[0] == ["h", "dim_Xh", "dim_Qh", "beta_h", "iterations"]
        assert len(rows) == 3
        assert all(float(r[3]) > 0.01 for r in rows[1:])

    def test_converge(self, small_config, tmp_path):
        """Test converge writes the rate table and the JSON summary."""
        out = tmp_path / "out"
        assert main(["--config", str(small_config), "--out", str(out), "converge"]) == 0
        rates = _csv(out / "rates.csv")
        assert rates[0][:4] == ["level", "h", "k", "dofs"]
        assert len(rates) == 3
        summary = json.loads((out / "summary.json").read_text())
        assert summary["element"] == "taylor_hood" and summary["variant"] == "R"
        assert summary["coupling"] == "k_eq_h"
        assert set(summary["checks"]) == {"u_l2_h1", "u_linf_l2", "p_l2_l2"}
        assert isinstance(summary["passed"], bool)
