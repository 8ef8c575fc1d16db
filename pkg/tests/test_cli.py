import argparse
import json

import pytest

from surface_stokes.cli import main, parse_alpha, parse_levels


def test_parse_levels():
    assert parse_levels("3..6") == (3, 4, 5, 6)
    assert parse_levels("2,4") == (2, 4)
    assert parse_levels("5") == (5,)
    for bad in ("6..3", "a", "1,x"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_levels(bad)


def test_parse_alpha():
    assert parse_alpha("3/2") == 1.5 and parse_alpha("2") == 2.0


def test_run_writes_reports(tmp_path, capsys):
    rc = main(["run", "--c", "1.25", "--levels", "1..2", "--jitter", "0.05", "--filter", "none",
               "--filter", "auto:3/2", "--out", str(tmp_path), "--dump-mesh"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "# filter=none" in out and "# filter=auto:1.5" in out
    for sub in ("none", "auto_1.5"):
        assert (tmp_path / sub / "report.csv").read_text().count("\n") == 3
    assert (tmp_path / "mesh_L2.off").exists() and (tmp_path / "plot_filters_l2.svg").exists()


def test_forcing_run_prints_diagnostics(capsys):
    assert main(["run", "--c", "2", "--levels", "1..2", "--jitter", "0.05", "--filter", "forcing",
                 "--add-killing", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("pk_f_error=") == 2


def test_eigen_json(capsys):
    assert main(["eigen", "--levels", "1..2", "--k", "3"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["levels"] == [1, 2] and len(d["extrapolated"]) == 3


def test_bad_input_exits_2(capsys):
    assert main(["run", "--c", "-1", "--levels", "1"]) == 2
    assert "surface-stokes:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--filter"])
