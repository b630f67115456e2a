import csv
import shutil
from pathlib import Path

import pytest

from jitcast.cli import run_cli

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.cfg"


def run(*argv):
    return run_cli([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("generate", "--config", SMOKE, "--out", out) == 0
    for step in ("cluster", "train", "evaluate", "report"):
        assert run(step, "--config", SMOKE, "--out", out) == 0
    return out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_pipeline_artifacts(workdir):
    for name in ("readings.csv", "daily.csv", "profiles.csv", "features.csv", "elbow.csv", "clusters.csv",
                 "metrics.csv", "predictions.csv", "loss_curves.csv", "report/summary.json"):
        assert (workdir / name).exists(), name
    assert len(rows(workdir / "elbow.csv")) == 10
    clusters = {r["cluster"] for r in rows(workdir / "clusters.csv")}
    assert len(list((workdir / "models").glob("*.ckpt"))) == len(clusters)
    metrics = rows(workdir / "metrics.csv")
    keys = {(r["cluster"], r["model"], r["lead_day"]) for r in metrics}
    assert len(keys) == len(metrics) == len(clusters) * 3 * 7
    assert len(rows(workdir / "report" / "mae_by_lead_day.csv")) == len(clusters) * 3


def test_report_is_reproducible(workdir):
    before = {p.name: p.read_bytes() for p in (workdir / "report").iterdir()}
    assert run("report", "--config", SMOKE, "--out", workdir) == 0
    assert before == {p.name: p.read_bytes() for p in (workdir / "report").iterdir()}


def test_predict_emits_seven_rows(workdir, tmp_path, capsys):
    ckpt = workdir / "models" / "cluster_0.ckpt"
    assert run("predict", "--checkpoint", ckpt, "--horizon-date", "2021-03-01") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "date,lead_day,forecast_kwh" and len(lines) == 8
    assert lines[1].startswith("2021-03-02,1,")
    out = tmp_path / "f.csv"
    assert run("predict", "--checkpoint", ckpt, "--horizon-date", "2021-03-01", "--out", out) == 0
    assert out.read_text().splitlines() == lines


def test_predict_rejects_date_outside_series(workdir, capsys):
    ckpt = workdir / "models" / "cluster_0.ckpt"
    assert run("predict", "--checkpoint", ckpt, "--horizon-date", "1999-01-01") == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("jitcast:") and len(err.splitlines()) == 1


def test_usage_errors(tmp_path, capsys):
    assert run("train", "--out", tmp_path / "x") == 2
    assert "usage" in capsys.readouterr().err
    assert run("bogus") == 2
    assert run("train", "--config", SMOKE, "--out", tmp_path / "x", "--nope") == 2
    assert run("train", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "x") == 2
    assert not (tmp_path / "x").exists()


def test_bad_input_creates_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\nunknown.key = 2\n")
    assert run("generate", "--config", bad, "--out", tmp_path / "o") == 1
    assert not (tmp_path / "o").exists()
    assert run("cluster", "--config", SMOKE, "--out", tmp_path / "empty") == 1
    assert not (tmp_path / "empty").exists()
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "readings.csv").write_text("Date_Time,customer_id,kWh\n2020-01-01T00:00:00,a,oops\n")
    assert run("ingest", "--config", SMOKE, "--out", broken) == 1
    assert sorted(p.name for p in broken.iterdir()) == ["readings.csv"]
    assert ":2:" in capsys.readouterr().err


def test_seed_flag_overrides(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("generate", "--config", SMOKE, "--out", a, "--seed", "1") == 0
    assert run("generate", "--config", SMOKE, "--out", b) == 0
    assert (a / "readings.csv").read_bytes() != (b / "readings.csv").read_bytes()
    assert "seed = 1" in (a / "run.cfg").read_text()


def test_ingest_with_explicit_input(workdir, tmp_path):
    shutil.copy(workdir / "readings.csv", tmp_path / "in.csv")
    out = tmp_path / "w"
    assert run("ingest", "--config", SMOKE, "--out", out, "--input", tmp_path / "in.csv") == 0
    assert (out / "daily.csv").read_bytes() == (workdir / "daily.csv").read_bytes()
