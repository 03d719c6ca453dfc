import csv
import io
import subprocess
import sys

import pytest

from tristeer import __version__
from tristeer import sweep as sw
from tristeer.cli import EXIT_NUMERIC, EXIT_USAGE, main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_report_to_stdout(capsys):
    code, out, _ = run(["report", "--alpha", "1.2", "--r", "2", "--n", "2"], capsys)
    assert code == 0
    assert out.splitlines()[0] == ",".join(sw.REPORT_COLUMNS)
    (row,) = rows_of(out)
    assert row["class_m"] == "CollectiveTripartite"


def test_report_engine_source_matches_closed_forms(capsys):
    base = ["report", "--alpha2", "2", "--r-alpha", "1.5", "--n0", "1", "--n1", "0.5"]
    _, a, _ = run(base, capsys)
    _, b, _ = run(base + ["--source", "engine"], capsys)
    ra, rb = rows_of(a)[0], rows_of(b)[0]
    for k in sw.REPORT_COLUMNS[5:14]:
        assert float(rb[k]) == pytest.approx(float(ra[k]), rel=1e-8)


def test_moments(capsys):
    code, out, _ = run(["moments", "--alpha2", "2", "--r-alpha", "0.34657359027997264"], capsys)
    (row,) = rows_of(out)
    assert code == 0 and float(row["var_X_a"]) == pytest.approx(2.5)
    code, out, _ = run(["moments", "--alpha", "1.2", "--r-alpha", "400", "--precision", "30"], capsys)
    assert code == 0 and float(rows_of(out)[0]["var_X_a"]) > 1e300


def test_sweep_and_manifest_round_trip(tmp_path, capsys):
    out1 = tmp_path / "s1.csv"
    code, _, _ = run(["sweep", "--var", "r", "--alpha", "1.2", "--n", "2", "--from", "0",
                      "--to", "10", "--points", "41", "--out", str(out1)], capsys)
    assert code == 0
    man = (tmp_path / "s1.manifest").read_text()
    assert f"artifact_version={__version__}" in man and "subcommand=sweep" in man
    out2 = tmp_path / "s2.csv"
    code, _, _ = run(["sweep", "--config", str(tmp_path / "s1.manifest"), "--out", str(out2)], capsys)
    assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert (tmp_path / "s2.manifest").read_text() == man


@pytest.mark.parametrize("argv", [
    ["thresholds", "--alpha", "2", "--which", "bipartite", "--points", "11"],
    ["regions", "--alpha", "1.2", "--n", "2"],
    ["oracle", "--alpha", "1.2", "--r", "1", "--kappa-ratio", "10", "--samples", "1000", "--seed", "3"],
])
def test_round_trip_other_subcommands(argv, tmp_path, capsys):
    first = tmp_path / "a.csv"
    assert run(argv + ["--out", str(first)], capsys)[0] == 0
    second = tmp_path / "b.csv"
    assert run([argv[0], "--config", str(tmp_path / "a.manifest"), "--out", str(second)], capsys)[0] == 0
    assert first.read_bytes() == second.read_bytes()


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nalpha=2.0\nr=1.0\nn=0\n")
    _, a, _ = run(["report", "--config", str(cfg), "--alpha", "1.2"], capsys)
    _, b, _ = run(["report", "--alpha", "1.2", "--r", "1", "--n", "0"], capsys)
    assert a == b


@pytest.mark.parametrize("content", ["bogus=1\n", "alpha\n", "alpha=abc\n", "subcommand=sweep\n",
                                     "which=sideways\n"])
def test_bad_config_is_usage_error(tmp_path, capsys, content):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(content)
    code, _, err = run(["report", "--config", str(cfg), "--alpha", "1.2", "--r", "1"], capsys)
    assert code == EXIT_USAGE and "error" in err


@pytest.mark.parametrize("argv", [
    ["report", "--r", "1"],                                   # no alpha
    ["report", "--alpha", "0.5", "--r", "1"],
    ["report", "--alpha", "1.2", "--r", "1", "--n", "1", "--n0", "2"],
    ["sweep", "--alpha", "1.2"],                              # no --var
    ["sweep", "--var", "r", "--alpha", "1.2", "--from", "3", "--to", "1"],
    ["thresholds", "--alpha", "1.2", "--points", "1"],
    ["report", "--alpha", "1.2", "--r", "1", "--config", "/nonexistent/file"],
])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == EXIT_USAGE and err


def test_sweep_error_names_the_constraint(capsys):
    _, _, err = run(["sweep", "--var", "r", "--alpha", "1.2", "--from", "3", "--to", "1"], capsys)
    assert "from <= to" in err


def test_numerical_failure_exit_code(capsys):
    code, _, err = run(["moments", "--alpha", "1.2", "--r-alpha", "400"], capsys)
    assert code == EXIT_NUMERIC and "numerical" in err


def test_oracle_row_error_still_writes_output(tmp_path, capsys):
    out = tmp_path / "o.csv"
    code, _, err = run(["oracle", "--alpha", "1.2", "--r", "2", "--kappa-ratio", "10", "1e4",
                        "--out", str(out)], capsys)
    assert code == EXIT_NUMERIC
    rows = rows_of(out.read_text())
    assert rows[0]["error"] == "" and rows[1]["error"].startswith("ParameterError")


def test_regions_output(capsys):
    code, out, _ = run(["regions", "--alpha", "1.2", "--n", "2", "--mode", "all"], capsys)
    rows = rows_of(out)
    assert code == 0 and [r["mode"] for r in rows] == ["m", "a", "c"]
    assert all(float(r["residual_lo"]) <= 1e-10 for r in rows)
    code, out, _ = run(["regions", "--alpha", "1.2", "--n", "0"], capsys)
    assert code == 0 and rows_of(out) == []


def test_figure_command(tmp_path, capsys):
    code, out, _ = run(["figure", "fig7", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert sorted(p.split("/")[-1] for p in out.split()) == [
        "fig7_a.csv", "fig7_c.csv", "fig7_m.csv", "fig7_regions.csv"]


def test_identical_invocations_are_byte_identical(capsys):
    argv = ["sweep", "--var", "n", "--alpha", "2", "--r", "3", "--from", "0", "--to", "4",
            "--points", "9", "--workers", "3"]
    assert run(argv, capsys)[1] == run(argv, capsys)[1]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tristeer", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
