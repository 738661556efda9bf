import csv
import json

import pytest

from cganeb import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def sim(tmp_path):
    d = tmp_path / "d.csv"
    assert run("simulate", "--n", 100, "--seed", 7, "--out", d, "--truth", tmp_path / "t.csv") == 0
    return d


def test_simulate_then_fit(tmp_path, sim, capsys):
    out = tmp_path / "nb.json"
    assert run("fit-nb", "--data", sim, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert len(doc["beta"]) == 5 and doc["columns"][0] == "const"
    assert "ln_aadt" in capsys.readouterr().out


def test_simulate_is_deterministic(tmp_path, sim):
    again = tmp_path / "again.csv"
    run("simulate", "--n", 100, "--seed", 7, "--out", again)
    assert again.read_bytes() == sim.read_bytes()


def test_seed_required_and_env_default(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    assert run("simulate", "--n", 10, "--out", tmp_path / "a.csv") == 1
    err = capsys.readouterr().err
    assert "--seed is required" in err and len(err.strip().splitlines()) == 1
    monkeypatch.setenv(cli.SEED_ENV, "7")
    assert run("simulate", "--n", 10, "--out", tmp_path / "b.csv") == 0
    run("simulate", "--n", 10, "--seed", 7, "--out", tmp_path / "c.csv")
    assert (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_paths_must_be_distinct(tmp_path, sim):
    assert run("simulate", "--n", 5, "--seed", 1, "--out", tmp_path / "x.csv", "--truth", tmp_path / "x.csv") == 1
    assert run("fit-nb", "--data", sim, "--out", sim) == 1


def test_missing_file_and_bad_model(tmp_path, sim, capsys):
    assert run("fit-nb", "--data", tmp_path / "nope.csv", "--out", tmp_path / "m.json") == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "other"}')
    assert run("eb", "--data", sim, "--model", bad, "--method", "nb", "--out", tmp_path / "e.csv") == 1
    assert "unknown model kind" in capsys.readouterr().err
    assert not (tmp_path / "e.csv").exists()


def test_method_model_mismatch(tmp_path, sim):
    run("fit-nb", "--data", sim, "--out", tmp_path / "nb.json")
    assert run("eb", "--data", sim, "--model", tmp_path / "nb.json", "--method", "cgan",
               "--out", tmp_path / "e.csv") == 1


def test_numerical_failure_exit_code(tmp_path, sim, capsys):
    rows = list(csv.reader(sim.open()))
    col = rows[0].index("crashes_p1")
    for r in rows[1:]:
        r[col] = "0"
    zero = tmp_path / "zero.csv"
    with zero.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert run("fit-nb", "--data", zero, "--out", tmp_path / "m.json") == 2
    assert "numerical failure" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def nb_eb_files(tmp_path, data):
    run("fit-nb", "--data", data, "--out", tmp_path / "nb.json")
    for p in ("P1", "P2"):
        assert run("eb", "--data", data, "--model", tmp_path / "nb.json", "--method", "nb",
                   "--period", p, "--out", tmp_path / f"nb_{p}.csv") == 0
    return tmp_path / "nb_P1.csv", tmp_path / "nb_P2.csv"


def test_screen_mismatched_sites(tmp_path, sim, capsys):
    e1, e2 = nb_eb_files(tmp_path, sim)
    lines = e2.read_text().splitlines()
    dropped = lines[5].split(",")[0]
    e2.write_text("\n".join(lines[:5] + lines[6:]) + "\n")
    code = run("screen", "--data", sim, "--method", "NB", e1, e2, "--out", tmp_path / "s.csv")
    assert code == 1
    err = capsys.readouterr().err
    assert f"missing site {dropped}" in err and len(err.strip().splitlines()) == 1
    assert not (tmp_path / "s.csv").exists()


def test_screen_outputs(tmp_path, sim):
    e1, e2 = nb_eb_files(tmp_path, sim)
    assert run("screen", "--data", sim, "--method", "NB", e1, e2, "--thresholds", 0.05, 0.1,
               "--out", tmp_path / "s.csv", "--text", tmp_path / "s.txt") == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 1 + 8 + 4
    assert "MCT" in (tmp_path / "s.txt").read_text()


def test_full_pipeline_report(tmp_path):
    d = tmp_path / "d.csv"
    assert run("simulate", "--n", 300, "--seed", 3, "--out", d) == 0
    assert run("fit-nb", "--data", d, "--out", tmp_path / "nb.json") == 0
    assert run("train-cgan", "--data", d, "--seed", 3, "--epochs", 3, "--out", tmp_path / "g.json",
               "--log", tmp_path / "log.csv") == 0
    assert len((tmp_path / "log.csv").read_text().splitlines()) == 4
    out = tmp_path / "rep"
    assert run("report", "--data", d, "--nb-model", tmp_path / "nb.json", "--cgan-model", tmp_path / "g.json",
               "--m", 20, "--out-dir", out) == 0
    with (out / "screening.csv").open() as fh:
        rows = [r for r in csv.DictReader(fh) if r["threshold"] != "AVG"]
    assert len(rows) == 16 and {r["test"] for r in rows} == {"SCT", "MCT", "RDT", "PDT"}
    assert all(r["NB-EB"] and r["CGAN-EB"] for r in rows)
    text = (out / "report.txt").read_text()
    for part in ("NB model coefficients", "MAPE", "Top 10 hotspots by CGAN-EB", "Improvement (CGAN-EB)"):
        assert part in text
    assert len((out / "metrics.csv").read_text().splitlines()) == 5


def test_help_documents_defaults(capsys):
    with pytest.raises(SystemExit):
        run("train-cgan", "--help")
    out = capsys.readouterr().out
    assert "default: 1000" in out and "default: 0.001" in out
