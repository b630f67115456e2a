"""Command-line entry point.

All subcommands except ``predict`` work inside one run directory (``--out``)
and read the run configuration from ``--config``. A step whose upstream
artifacts are missing runs the upstream steps first, so
``generate`` -> ``cluster`` -> ``train`` -> ``evaluate`` is a complete run.

Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import clustering
from .checkpoint import ClusterState, load_cluster_state, save_cluster_state
from .config import RunConfig, dump_config, load_config
from .data import DailySeries, calendar_features, parse_readings, sma
from .datagen import generate
from .ensemble import cascade_predict
from .evaluation import MetricsReport
from .pipeline import (ClusteringResult, cluster_average_series, cluster_customers, evaluate_clusters, ingest,
                       prepare_cluster, train_cluster)
from .windows import ENCODER_LEN, WEEK_LEN

log = logging.getLogger("jitcast")

SUBCOMMANDS = ("generate", "ingest", "preprocess", "cluster", "train", "predict", "evaluate", "report")

READINGS = "readings.csv"
LABELS = "labels.csv"
DAILY = "daily.csv"
CLEANING = "cleaning_report.json"
PROFILES = "profiles.csv"
FEATURES = "features.csv"
ELBOW = "elbow.csv"
CLUSTERS = "clusters.csv"
AVERAGES = "cluster_averages.csv"
MODELS_DIR = "models"
LOSSES = "loss_curves.csv"
METRICS = "metrics.csv"
PREDICTIONS = "predictions.csv"
REPORT_DIR = "report"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# file helpers


def _write_text(path: Path, text: str) -> None:
    """Write via a temp file and rename, so readers never see a half-written artifact."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def write_daily(series: list[DailySeries]) -> str:
    rows = []
    for s in series:
        for d, v in zip(s.dates, s.values):
            rows.append((s.customer_id, d.isoformat(), _fmt(v)))
    return _csv_text(("customer_id", "date", "kwh"), rows)


def read_daily(path: Path) -> list[DailySeries]:
    values: dict[str, list[tuple[dt.date, float]]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            values.setdefault(r["customer_id"], []).append((dt.date.fromisoformat(r["date"]), float(r["kwh"])))
    out = []
    for cid in sorted(values):
        rows = sorted(values[cid])
        out.append(DailySeries(cid, rows[0][0], np.array([v for _, v in rows])))
    return out


def read_clusters(path: Path) -> dict[str, int]:
    with open(path, newline="") as fh:
        return {r["customer_id"]: int(r["cluster"]) for r in csv.DictReader(fh)}


def checkpoint_paths(run: Path) -> list[Path]:
    return sorted((run / MODELS_DIR).glob("cluster_*.ckpt"), key=lambda p: int(p.stem.split("_")[1]))


# ---------------------------------------------------------------------------
# steps


def step_generate(cfg: RunConfig, run: Path) -> None:
    gen = generate(cfg.generator())
    readings, labels = gen.readings_csv(), gen.labels_csv()
    _write_text(run / READINGS, readings)
    _write_text(run / LABELS, labels)
    _write_text(run / "run.cfg", dump_config(cfg))


def step_ingest(cfg: RunConfig, run: Path, inputs: list[Path] | None = None) -> None:
    inputs = inputs or [run / READINGS]
    for p in inputs:
        if not p.exists():
            raise FileNotFoundError(f"input file {p} does not exist")
    groups = parse_readings([str(p) for p in inputs])
    daily, report = ingest(groups, cfg)
    if not daily:
        raise ValueError("no customer survived cleaning")
    _write_text(run / DAILY, write_daily(daily))
    _write_text(run / CLEANING, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def _ensure(run: Path, name: str, cfg: RunConfig) -> None:
    producers = {DAILY: step_ingest, PROFILES: step_preprocess, CLUSTERS: step_cluster}
    if not (run / name).exists():
        if name == DAILY and not (run / READINGS).exists():
            raise FileNotFoundError(f"{run / READINGS} not found; run `generate` or `ingest --input` first")
        producers[name](cfg, run)


def step_preprocess(cfg: RunConfig, run: Path) -> None:
    _ensure(run, DAILY, cfg)
    daily = read_daily(run / DAILY)
    profiles = clustering.build_profile_vectors(daily)
    prof_rows = [(p.customer_id, *(_fmt(v) for v in p.features)) for p in profiles]
    prof_header = (["customer_id", "mean_kwh"] + [f"dow_{i}" for i in range(7)]
                   + [f"month_{m}" for m in range(1, 13)])
    feat_rows = []
    for s in daily:
        smoothed = sma(s.values, 7)
        cal = calendar_features(s.start_date, len(s))
        for d, v, m, c in zip(s.dates, s.values, smoothed, cal):
            feat_rows.append((s.customer_id, d.isoformat(), _fmt(v), _fmt(m), int(c[0]), int(c[1]), int(c[2])))
    profiles_text = _csv_text(prof_header, prof_rows)
    features_text = _csv_text(("customer_id", "date", "daily_kwh", "sma7", "day_of_week", "month", "year"), feat_rows)
    _write_text(run / PROFILES, profiles_text)
    _write_text(run / FEATURES, features_text)


def step_cluster(cfg: RunConfig, run: Path) -> ClusteringResult:
    _ensure(run, PROFILES, cfg)
    daily = read_daily(run / DAILY)
    result = cluster_customers(daily, cfg)
    series = cluster_average_series(daily, result.labels)
    elbow = _csv_text(("k", "inertia"), [(k, _fmt(v)) for k, v in result.curve])
    assign = _csv_text(("customer_id", "cluster"), sorted(result.labels.items()))
    avg_rows = []
    for c, s in series.items():
        for d, v, m in zip(s.dates, s.values, sma(s.values, 7)):
            avg_rows.append((c, d.isoformat(), _fmt(v), _fmt(m)))
    averages = _csv_text(("cluster", "date", "kwh", "sma7"), avg_rows)
    centroids = {"k": result.k, "inertia": result.model.inertia, "seed": result.model.seed,
                 "n_init": result.model.n_init, "centroids": result.model.centroids.tolist()}
    _write_text(run / ELBOW, elbow)
    _write_text(run / CLUSTERS, assign)
    _write_text(run / AVERAGES, averages)
    _write_text(run / "cluster_model.json", json.dumps(centroids, indent=2) + "\n")
    return result


def step_train(cfg: RunConfig, run: Path) -> dict[int, ClusterState]:
    _ensure(run, CLUSTERS, cfg)
    daily = read_daily(run / DAILY)
    labels = read_clusters(run / CLUSTERS)
    model_info = json.loads((run / "cluster_model.json").read_text())
    series = cluster_average_series(daily, labels)
    prepared = {c: prepare_cluster(s, cfg.train.fractions) for c, s in series.items()}
    states = {}
    for c in sorted(prepared):
        state = train_cluster(prepared[c], cfg, c)
        state.centroid = np.asarray(model_info["centroids"][c])
        state.members = sorted(cid for cid, lab in labels.items() if lab == c)
        states[c] = state
    loss_rows = []
    for c, st in states.items():
        for j, h in sorted(st.ensemble.loss_history.items()):
            for e, tr in enumerate(h.train):
                loss_rows.append((c, "jittrans", j, e + 1, _fmt(tr), _fmt(h.val[e]) if h.val else ""))
        if "vanilla_loss" in st.extra:
            h = st.extra["vanilla_loss"]
            for e, tr in enumerate(h["train"]):
                loss_rows.append((c, "vanilla", 0, e + 1, _fmt(tr), _fmt(h["val"][e]) if h["val"] else ""))
    stale = checkpoint_paths(run)
    for p in stale:
        if int(p.stem.split("_")[1]) not in states:
            p.unlink()
    for c, st in states.items():
        (run / MODELS_DIR).mkdir(parents=True, exist_ok=True)
        save_cluster_state(st, run / MODELS_DIR / f"cluster_{c}.ckpt")
    _write_text(run / LOSSES, _csv_text(("cluster", "model", "stage", "epoch", "train_mse", "val_mse"), loss_rows))
    return states


def _load_states(run: Path, cfg: RunConfig) -> dict[int, ClusterState]:
    if not checkpoint_paths(run):
        step_train(cfg, run)
    return {st.cluster: st for st in (load_cluster_state(p) for p in checkpoint_paths(run))}


def step_evaluate(cfg: RunConfig, run: Path) -> MetricsReport:
    states = _load_states(run, cfg)
    prepared = {c: prepare_cluster(st.series, cfg.train.fractions, transforms=st.transforms)
                for c, st in states.items()}
    report = evaluate_clusters(states, prepared)
    logs = {}
    for c, st in states.items():
        test = prepared[c].test
        res = cascade_predict(st.ensemble, test.encoder, test.week, test.future_dow, test.future_month,
                              st.transforms)
        logs[c] = res.prediction_log_csv(window_ids=test.starts.tolist())
    _write_text(run / METRICS, report.metrics_csv())
    _write_text(run / PREDICTIONS, report.predictions_csv())
    for c, text in logs.items():
        _write_text(run / f"prediction_log_cluster{c}.csv", text)
    return report


def step_report(cfg: RunConfig, run: Path) -> None:
    if not (run / METRICS).exists():
        step_evaluate(cfg, run)
    out = run / REPORT_DIR
    bundle = {}
    for name in (ELBOW, AVERAGES, METRICS, PREDICTIONS, CLEANING):
        if not (run / name).exists():
            raise FileNotFoundError(f"{run / name} is missing; rerun the pipeline")
        bundle[name] = (run / name).read_text()
    rows = list(csv.DictReader(io.StringIO(bundle[METRICS])))
    table: dict[tuple[str, str], dict[int, str]] = {}
    for r in rows:
        table.setdefault((r["cluster"], r["model"]), {})[int(r["lead_day"])] = r["mae_kwh"]
    leads = sorted({int(r["lead_day"]) for r in rows})
    mae_table = _csv_text(["cluster", "model"] + [f"lead_{k}" for k in leads],
                          [[c, m] + [table[(c, m)].get(k, "") for k in leads] for (c, m) in table])
    summary = {
        "clusters": sorted({int(r["cluster"]) for r in rows}),
        "selected_k": json.loads((run / "cluster_model.json").read_text())["k"],
        "k_max": len(bundle[ELBOW].splitlines()) - 1,
        "mean_mae_kwh": {
            f"{c}/{m}": repr(float(np.mean([float(v) for v in d.values()]))) for (c, m), d in sorted(table.items())
        },
    }
    for name, text in bundle.items():
        _write_text(out / name, text)
    _write_text(out / "mae_by_lead_day.csv", mae_table)
    _write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


def step_predict(checkpoint: Path, horizon_date: dt.date, out: Path | None) -> str:
    """Forecast the 7 days after ``horizon_date`` (the last observed day)."""
    st = load_cluster_state(checkpoint)
    s = st.series
    origin = (horizon_date - s.start_date).days
    first = origin - (ENCODER_LEN + WEEK_LEN - 2)
    if first < 0 or origin >= len(s):
        last = s.start_date + dt.timedelta(days=len(s) - 1)
        earliest = s.start_date + dt.timedelta(days=ENCODER_LEN + WEEK_LEN - 2)
        raise ValueError(f"--horizon-date must lie in {earliest}..{last} for this checkpoint")
    smoothed = sma(s.values, 7)
    cal = calendar_features(s.start_date, len(s) + 7 + 1)
    rows = st.transforms.rows(smoothed[:origin + 1], cal[:origin + 1, 0], cal[:origin + 1, 1])
    encoder = rows[first:first + ENCODER_LEN]
    week = rows[origin - WEEK_LEN + 1:origin + 1]
    fut = cal[origin + 1:origin + 1 + 7]
    res = cascade_predict(st.ensemble, encoder, week, fut[:, 0], fut[:, 1], st.transforms)
    out_rows = []
    for k, v in enumerate(res.forecast_kwh[0], start=1):
        out_rows.append(((horizon_date + dt.timedelta(days=k)).isoformat(), k, _fmt(v)))
    text = _csv_text(("date", "lead_day", "forecast_kwh"), out_rows)
    if out is not None:
        _write_text(out, text)
    return text


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jitcast", description="Cluster-wise cascaded transformer load forecasting")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "predict":
            p.add_argument("--checkpoint", required=True, type=Path)
            p.add_argument("--horizon-date", required=True, type=dt.date.fromisoformat,
                           help="last observed day; the forecast covers the following 7 days")
            p.add_argument("--out", type=Path, help="forecast CSV path (default: stdout)")
            p.add_argument("--config", type=Path, help="ignored; the checkpoint carries its configuration")
            p.add_argument("--seed", type=int, help="ignored; prediction is deterministic")
            continue
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path, help="run directory")
        p.add_argument("--seed", type=int, help="overrides the config file and JITCAST_SEED")
        if name == "ingest":
            p.add_argument("--input", type=Path, action="append", help="readings CSV (repeatable)")
    return parser


def _resolve_config(args) -> RunConfig:
    if not args.config.exists():
        raise UsageError(f"config file {args.config} does not exist")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "predict":
            if not args.checkpoint.exists():
                raise UsageError(f"checkpoint {args.checkpoint} does not exist")
            text = step_predict(args.checkpoint, args.horizon_date, args.out)
            if args.out is None:
                sys.stdout.write(text)
            return 0
        cfg = _resolve_config(args)
        run = args.out
        steps = {
            "generate": lambda: step_generate(cfg, run),
            "ingest": lambda: step_ingest(cfg, run, args.input),
            "preprocess": lambda: step_preprocess(cfg, run),
            "cluster": lambda: step_cluster(cfg, run),
            "train": lambda: step_train(cfg, run),
            "evaluate": lambda: step_evaluate(cfg, run),
            "report": lambda: step_report(cfg, run),
        }
        steps[args.command]()
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"jitcast: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes a one-line diagnostic
        print(f"jitcast: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
