import csv
import math

import numpy as np
import pytest

from graphfl import cli
from graphfl.config import parse_config
from graphfl.experiment import (
    BUDGET_COLUMNS,
    EXIT_CONFIG_ERROR,
    EXIT_DIVERGED,
    EXIT_OK,
    SUMMARY_COLUMNS,
    TRAJECTORY_COLUMNS,
    budget_rows,
    emit_budget_table,
    run_comparison,
)

SMALL = "[dataset]\nP = 3\nK = 4\nN = 10\n[engine]\nT = 20\nbatch_size = 5\n[experiment]\nR = 2\nwindow = 5\n"


def read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.reader(handle))


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    return run_comparison(parse_config(SMALL), out), out


def test_trajectory_csv_shape(comparison):
    result, out = comparison
    rows = read_csv(out / "trajectory.csv")
    assert tuple(rows[0]) == TRAJECTORY_COLUMNS
    assert len(rows) - 1 == 2 * 21 * 3
    assert {r[0] for r in rows[1:]} == {"none", "iid", "hybrid"}


def test_summary_and_files(comparison):
    result, out = comparison
    rows = read_csv(out / "summary.csv")
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    assert [r[0] for r in rows[1:]] == ["none", "iid", "hybrid"]
    assert float(rows[1][5]) == 0.0
    assert (out / "msd.svg").read_text().lstrip().startswith("<?xml")
    assert read_csv(out / "divergences.csv") == [["scheme", "run", "iteration", "server"]]
    assert result.exit_code == EXIT_OK


def test_schemes_share_dataset_and_sampling(comparison):
    result, _ = comparison
    first = {s: t[0] for s, t in result.trajectories.items()}
    # identical sampling: the noiseless and hybrid centroids agree after one round
    np.testing.assert_allclose(first["none"].rows[1].centroid, first["hybrid"].rows[1].centroid, rtol=1e-10)


def test_rerun_from_archived_config_is_byte_identical(comparison, tmp_path):
    _, out = comparison
    again = tmp_path / "again"
    code = cli.main(["compare", "-c", str(out / "config.ini"), "-o", str(again)])
    assert code == EXIT_OK
    for name in ("config.ini", "trajectory.csv", "summary.csv", "divergences.csv", "msd.svg"):
        assert (again / name).read_bytes() == (out / name).read_bytes(), name


def test_single_round_single_run(tmp_path):
    config = parse_config(SMALL, ["T=1", "R=1", "plot=false"])
    run_comparison(config, tmp_path)
    rows = read_csv(tmp_path / "trajectory.csv")
    assert len(rows) - 1 == 2 * 3
    assert not (tmp_path / "msd.svg").exists()


def test_divergence_sets_exit_code(tmp_path):
    config = parse_config(SMALL, ["schemes=iid", "sigma_g=1e14", "plot=false"])
    result = run_comparison(config, tmp_path)
    assert result.exit_code == EXIT_DIVERGED
    assert result.summary[0].diverged_runs == 2
    assert math.isnan(result.summary[0].plateau_msd_db)
    assert len(read_csv(tmp_path / "divergences.csv")) == 3
    # each divergent run keeps its initial row only
    assert len(read_csv(tmp_path / "trajectory.csv")) - 1 == 2


# --- budget


def test_budget_rows():
    rows = budget_rows(0.1, 1.0, 0.2, 10)
    assert rows[0] == (0, 0.0, 0.0)
    assert rows[1][1] == pytest.approx(0.2)
    assert rows[1][2] == pytest.approx(1.414214, abs=1e-6)
    assert rows[10][2] == pytest.approx(55 * math.sqrt(2))


def test_budget_ratio_tends_to_four():
    rows = budget_rows(0.1, 1.0, 0.2, 2000)
    assert rows[2000][2] / rows[1000][2] == pytest.approx(4.0, rel=1e-3)


def test_budget_csv(tmp_path):
    path = tmp_path / "budget.csv"
    emit_budget_table(0.1, 1.0, 0.2, 5, path)
    rows = read_csv(path)
    assert tuple(rows[0]) == BUDGET_COLUMNS
    assert len(rows) == 7
    assert rows[2] == ["1", repr(0.2), repr(math.sqrt(2) * 0.1 * 2 / 0.2)]


def test_budget_rejects_nonpositive_inputs():
    with pytest.raises(ValueError):
        budget_rows(0.1, 1.0, 0.0, 3)


# --- CLI


def test_cli_budget_stdout(capsys):
    assert cli.main(["budget", "--gradient-bound", "1", "--i-max", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "i,delta,epsilon"
    assert lines[1] == "0,0.0,0.0"
    assert len(lines) == 4


def test_cli_budget_measures_bound(tmp_path):
    path = tmp_path / "b.csv"
    args = ["budget", "--set", "P=2", "--set", "K=3", "--set", "N=10", "--i-max", "3", "-o", str(path)]
    assert cli.main(args) == EXIT_OK
    assert float(read_csv(path)[2][1]) > 0


def test_cli_graph_check(capsys):
    assert cli.main(["graph-check", "--edges", "0-1, 1-2", "--nodes", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "spectral_gap=0.666666666667" in out
    assert "doubly_stochastic" in out


def test_cli_graph_check_disconnected(capsys):
    assert cli.main(["graph-check", "--edges", "0-1", "--nodes", "3"]) == EXIT_CONFIG_ERROR
    assert "unreachable" in capsys.readouterr().err


def test_cli_config_error(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[engine]\nL = 60\n")
    assert cli.main(["compare", "-c", str(path)]) == EXIT_CONFIG_ERROR
    err = capsys.readouterr().err
    assert "line 2" in err and "L = 60" in err


def test_cli_run_single_scheme(tmp_path, capsys):
    config = tmp_path / "c.ini"
    config.write_text(SMALL)
    out = tmp_path / "out"
    assert cli.main(["run", "-c", str(config), "--scheme", "none", "-o", str(out)]) == EXIT_OK
    rows = read_csv(out / "trajectory.csv")
    assert {r[0] for r in rows[1:]} == {"none"}
    assert "none" in capsys.readouterr().out


def test_cli_default_config_round_trips(capsys):
    assert cli.main(["default-config"]) == EXIT_OK
    assert parse_config(capsys.readouterr().out) == parse_config("")


def test_cli_export_data(tmp_path):
    path = tmp_path / "data.csv"
    assert cli.main(["export-data", "--set", "P=2", "--set", "K=3", "--set", "N=10", "-o", str(path)]) == EXIT_OK
    assert len(read_csv(path)) == 1 + 2 * 3 * 10
