"""End-to-end experiment: clean -> aggregate -> cluster -> per-cluster cascade training -> evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import clustering
from .checkpoint import ClusterState
from .config import RunConfig
from .data import (CleaningReport, CustomerReadings, DailySeries, FeatureFrame, average_series,
                   build_feature_frame, clean_customers, daily_aggregate)
from .ensemble import build_ensemble, stage_seeds, train_cascade
from .evaluation import MetricsReport, build_vanilla, evaluate, forecast_all, train_vanilla
from .windows import SPAN, WindowBatch, fit_days_for, make_windows, split_chronological

log = logging.getLogger(__name__)


def ingest(groups: Mapping[str, CustomerReadings], cfg: RunConfig) -> tuple[list[DailySeries], CleaningReport]:
    kept, report = clean_customers(groups, cfg.cleaning)
    daily = []
    for cid in sorted(kept):
        try:
            daily.append(daily_aggregate(kept[cid]))
        except ValueError as exc:
            log.warning("dropping %s: %s", cid, exc)
    return daily, report


@dataclass
class ClusteringResult:
    customer_ids: list[str]
    vectors: np.ndarray  # raw profile vectors
    standardized: np.ndarray
    curve: list[tuple[int, float]]
    k: int
    model: clustering.ClusterModel

    @property
    def labels(self) -> dict[str, int]:
        return dict(zip(self.customer_ids, self.model.labels.tolist()))


def cluster_customers(daily: list[DailySeries], cfg: RunConfig) -> ClusteringResult:
    profiles = clustering.build_profile_vectors(daily)
    if not profiles:
        raise ValueError("no customer has enough history to be clustered")
    ids = [p.customer_id for p in profiles]
    raw = np.stack([p.features for p in profiles])
    x = clustering.standardize_blocks(raw)
    cc = cfg.cluster
    opts = dict(max_iter=cc.max_iter, tol=cc.tol, seed=cfg.seed, n_init=cc.n_init)
    curve = clustering.elbow_curve(x, k_max=cc.k_max, **opts)
    k = cc.k if cc.k > 0 else clustering.elbow_select(curve)
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the number of customers ({len(ids)})")
    model = clustering.kmeans(x, k, **opts)
    # stable numbering: clusters ordered by mean consumption of their members
    level = np.array([raw[model.labels == c, 0].mean() for c in range(k)])
    order = np.argsort(level, kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    model.labels = remap[model.labels]
    model.centroids = model.centroids[order]
    return ClusteringResult(ids, raw, x, curve, k, model)


def cluster_average_series(daily: list[DailySeries], labels: Mapping[str, int]) -> dict[int, DailySeries]:
    by_cluster: dict[int, list[DailySeries]] = {}
    for s in daily:
        if s.customer_id in labels:
            by_cluster.setdefault(labels[s.customer_id], []).append(s)
    return {c: average_series(by_cluster[c], name=f"cluster{c}") for c in sorted(by_cluster)}


@dataclass
class PreparedCluster:
    series: DailySeries
    frame: FeatureFrame
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch


def prepare_cluster(series: DailySeries, fractions=(0.8, 0.1, 0.1), transforms=None) -> PreparedCluster:
    """Features fitted on the training days only, then windows split with a purge gap."""
    if len(series) < SPAN:
        raise ValueError(f"cluster series has {len(series)} days; at least {SPAN} are needed")
    frame = build_feature_frame(series, fit_days=fit_days_for(len(series), fractions))
    if transforms is not None:
        frame = FeatureFrame(frame.start_date, frame.sma7, frame.day_of_week, frame.month, frame.year,
                             transforms.context_reduced(frame.sma7, frame.day_of_week, frame.month), transforms)
    train, val, test = split_chronological(make_windows(frame), fractions, purge=SPAN - 1)
    return PreparedCluster(series, frame, WindowBatch.stack(train), WindowBatch.stack(val), WindowBatch.stack(test))


def cluster_seed(seed: int, cluster: int) -> int:
    return stage_seeds(seed, cluster + 1)[cluster]


def train_cluster(prep: PreparedCluster, cfg: RunConfig, cluster: int) -> ClusterState:
    seed = cluster_seed(cfg.seed, cluster)
    tcfg = cfg.train_config()
    t0 = time.perf_counter()
    ens = build_ensemble(cfg.ensemble(), seed=seed)
    train_cascade(ens, prep.train, prep.val, prep.frame.transforms, tcfg)
    vanilla = None
    if cfg.train_vanilla:
        vseed = stage_seeds(seed + 1, 1)[0]
        vanilla = build_vanilla(cfg.model, vseed)
        hist = train_vanilla(vanilla, prep.train, prep.val, prep.frame.transforms, tcfg, seed=vseed)
    else:
        hist = None
    log.info("cluster %d trained in %.1fs", cluster, time.perf_counter() - t0)
    extra = {
        "loss_curves": {str(j): {"train": h.train, "val": h.val, "best_epoch": h.best_epoch}
                        for j, h in ens.loss_history.items()},
    }
    if hist is not None:
        extra["vanilla_loss"] = {"train": hist.train, "val": hist.val, "best_epoch": hist.best_epoch}
    return ClusterState(cluster, ens, vanilla, prep.frame.transforms, prep.series, cfg.seed, extra=extra)


def evaluate_clusters(states: Mapping[int, ClusterState], prepared: Mapping[int, PreparedCluster]) -> MetricsReport:
    forecasts = {c: forecast_all(states[c].ensemble, states[c].vanilla, prepared[c].test, states[c].transforms)
                 for c in sorted(states)}
    return evaluate(forecasts, {c: prepared[c].test for c in sorted(states)})


@dataclass
class ExperimentResult:
    daily: list[DailySeries]
    cleaning: CleaningReport
    clustering: ClusteringResult
    series: dict[int, DailySeries]
    prepared: dict[int, PreparedCluster]
    states: dict[int, ClusterState]
    report: MetricsReport
    timings: dict[str, float] = field(default_factory=dict)


def run_experiment(groups: Mapping[str, CustomerReadings], cfg: RunConfig) -> ExperimentResult:
    timings = {}
    t = time.perf_counter()
    daily, cleaning = ingest(groups, cfg)
    timings["ingest"] = time.perf_counter() - t

    t = time.perf_counter()
    clus = cluster_customers(daily, cfg)
    timings["cluster"] = time.perf_counter() - t
    log.info("selected k=%d from elbow curve", clus.k)

    series = cluster_average_series(daily, clus.labels)
    prepared = {c: prepare_cluster(s, cfg.train.fractions) for c, s in series.items()}
    t = time.perf_counter()
    states = {}
    for c in sorted(prepared):
        states[c] = train_cluster(prepared[c], cfg, c)
        states[c].centroid = clus.model.centroids[c]
        states[c].members = [cid for cid, lab in clus.labels.items() if lab == c]
    timings["train"] = time.perf_counter() - t
    report = evaluate_clusters(states, prepared)
    return ExperimentResult(daily, cleaning, clus, series, prepared, states, report, timings)


def readings_from_generated(gen) -> dict[str, CustomerReadings]:
    """In-memory equivalent of writing the generated CSV and parsing it back."""
    out = {}
    for cid, values in zip(gen.customer_ids, gen.kwh):
        keep = ~np.isnan(values)
        out[cid] = CustomerReadings(cid, gen.timestamps[keep], np.round(values[keep], 6))
    return out
