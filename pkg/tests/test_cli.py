import csv
import json

import pytest

from wildhiggs.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER, main


@pytest.fixture(autouse=True)
def cache_env(monkeypatch, tmp_path):
    monkeypatch.setenv("HML_CACHE_DIR", str(tmp_path / "cache"))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_partitions(tmp_path, capsys):
    assert main(["partitions", "--k", "2", "--n", "3", "--out", str(tmp_path / "o")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "(3, 0) -> (3/4, -3/4)" in out and "(2, 1) -> (1/4, -1/4)" in out
    table = rows(tmp_path / "o" / "partitions.csv")
    assert [r["partition"] for r in table] == ["3 0", "2 1"]
    assert {r["base_dimension"] for r in table} == {"1"}


@pytest.mark.parametrize("k,n,count", [(1, 0, 1), (3, 3, 4)])
def test_partitions_counts(tmp_path, k, n, count):
    assert main(["partitions", "--k", str(k), "--n", str(n), "--out", str(tmp_path)]) == EXIT_OK
    assert len(rows(tmp_path / "partitions.csv")) == count


@pytest.mark.parametrize(
    "argv",
    [
        ["partitions", "--k", "0", "--n", "3"],
        ["solve-small", "--u", "1", "--grid-n", "64"],
        ["solve-small", "--u", "1", "--grid-n", "33"],
        ["solve-small", "--u", "100"],
        ["big", "--gamma", "0", "--omega", "0"],
        ["mu-sweep", "--grid-n", "129"],
        ["solve-small", "--tol", "-1"],
    ],
)
def test_config_errors_exit_2(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_command_time_config_error_writes_manifest(tmp_path):
    assert main(["mu-sweep", "--grid-n", "129", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "config error"


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text('command = "decay"\n')
    assert main(["solve-small", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_nonconvergence_exit_3(tmp_path):
    code = main(["solve-small", "--u", "1", "--grid-n", "129", "--max-iter", "1", "--no-cache", "--out", str(tmp_path / "o")])
    assert code == EXIT_SOLVER
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] == "nonconverged"


def test_unwritable_output_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["partitions", "--out", str(blocker / "sub")]) == EXIT_IO


def test_solve_small_manifest_and_cache(tmp_path):
    out = tmp_path / "a"
    assert main(["solve-small", "--u", "0", "--grid-n", "129", "--out", str(out)]) == EXIT_OK
    item = json.loads((out / "manifest.json").read_text())["items"][0]
    assert item["residual_sup"] <= 1e-8
    assert len(item["excisions"]) == 1 and item["excisions"][0]["roots"] == 3
    timings = tmp_path / "t.json"
    assert main(["solve-small", "--u", "0", "--grid-n", "129", "--out", str(tmp_path / "b"), "--timings", str(timings)]) == EXIT_OK
    assert json.loads(timings.read_text())["cache_hit"] is True
    again = json.loads((tmp_path / "b" / "manifest.json").read_text())["items"][0]
    assert again["cache_digest"] == item["cache_digest"]


def test_mu_sweep_line(tmp_path):
    out = tmp_path / "m"
    assert main(["mu-sweep", "--u-line", "0..2", "--steps", "3", "--grid-n", "129", "--out", str(out)]) == EXIT_OK
    table = rows(out / "mu_sweep.csv")
    assert [complex(float(r["u_re"]), float(r["u_im"])) for r in table] == [0, 1, 2]
    assert all(float(r["mu"]) >= 0 and r["status"] == "ok" for r in table)


def test_mu_sweep_records_failures(tmp_path):
    out = tmp_path / "m"
    assert main(["mu-sweep", "--u", "1,2", "--grid-n", "129", "--max-iter", "1", "--no-cache", "--out", str(out)]) == EXIT_SOLVER
    assert all(r["status"].startswith("nonconverged") for r in rows(out / "mu_sweep.csv"))


def test_parallel_sweep_matches_serial(tmp_path):
    base = ["mu-sweep", "--u", "1,i,2", "--grid-n", "129", "--no-cache"]
    assert main(base + ["--out", str(tmp_path / "s")]) == EXIT_OK
    assert main(base + ["--jobs", "2", "--out", str(tmp_path / "p")]) == EXIT_OK
    assert (tmp_path / "s" / "mu_sweep.csv").read_bytes() == (tmp_path / "p" / "mu_sweep.csv").read_bytes()


def test_big_gamma_zero(tmp_path):
    out = tmp_path / "b"
    assert main(["big", "--gamma", "0", "--omega", "1", "--grid-n", "129", "--out", str(out)]) == EXIT_OK
    item = json.loads((out / "manifest.json").read_text())["items"][0]
    assert item["offdiag_sup"] <= 1e-6


def test_repeated_runs_are_byte_identical(tmp_path, monkeypatch):
    argv = ["gamma-sweep", "--gammas", "0.5,0.25", "--grid-n", "65", "--eps", "0.25"]
    monkeypatch.setenv("HML_CACHE_DIR", str(tmp_path / "c1"))
    assert main(argv + ["--out", str(tmp_path / "1")]) == EXIT_OK
    monkeypatch.setenv("HML_CACHE_DIR", str(tmp_path / "c2"))  # fresh cache forces a recompute
    assert main(argv + ["--out", str(tmp_path / "2")]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "1").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "2").iterdir())
    for name in names:
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()
    d = rows(tmp_path / "1" / "gamma_sweep.csv")
    assert float(d[0]["distance"]) > float(d[1]["distance"])
