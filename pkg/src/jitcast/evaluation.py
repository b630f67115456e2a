"""Baselines (persistence, single transformer) and per-lead-day MAE reporting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import FeatureTransforms
from .ensemble import JitEnsemble, cascade_predict
from .training import LossHistory, TrainConfig, train_loop
from .transformer import ModelConfig, Seq2SeqTransformer
from .windows import HORIZON, N_TARGETS, WEEK_LEN, WindowBatch

MODELS = ("jittrans", "vanilla", "persistence")
METRICS_HEADER = ("cluster", "model", "lead_day", "mae_kwh", "n_windows")
PREDICTIONS_HEADER = ("cluster", "window_id", "lead_day", "y_true", "y_pred", "model")


def mae(preds, actuals) -> float:
    p, a = np.asarray(preds, dtype=np.float64), np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise ValueError("mae of an empty sequence")
    return float(np.abs(p - a).mean())


def persistence_forecast(week) -> np.ndarray:
    """Repeat the last observed value across the horizon; ``week`` is ``(7,)`` or ``(N, 7)`` values."""
    week = np.asarray(week, dtype=np.float64)
    if week.shape[-1] == 0:
        raise ValueError("observed week is empty")
    return np.repeat(week[..., -1:], HORIZON, axis=-1)


def vanilla_decoder_input(week: np.ndarray, future_dow: np.ndarray, future_month: np.ndarray,
                          transforms: FeatureTransforms) -> np.ndarray:
    """Observed week plus 6 placeholder rows that carry the last observed value and the future calendar."""
    n_fill = N_TARGETS - WEEK_LEN
    last = transforms.sma7.inverse(week[:, -1, 0])
    kwh = np.repeat(last[:, None], n_fill, axis=1)
    fill = transforms.rows(kwh, future_dow[:, :n_fill], future_month[:, :n_fill])
    return np.concatenate([week, fill], axis=1)


def build_vanilla(config: ModelConfig, seed: int) -> Seq2SeqTransformer:
    return Seq2SeqTransformer(config, seed=seed)


def train_vanilla(model: Seq2SeqTransformer, train: WindowBatch, val: WindowBatch | None,
                  transforms: FeatureTransforms, config: TrainConfig, seed: int | None = None) -> LossHistory:
    dec = vanilla_decoder_input(train.week, train.future_dow, train.future_month, transforms)
    val_arrays = None
    if val is not None:
        val_arrays = (val.encoder, vanilla_decoder_input(val.week, val.future_dow, val.future_month, transforms),
                      val.targets)
    return train_loop(model, train.encoder, dec, train.targets, val_arrays, config, seed=seed)


def vanilla_forecast(model: Seq2SeqTransformer, encoder: np.ndarray, week: np.ndarray,
                     future_dow: np.ndarray, future_month: np.ndarray,
                     transforms: FeatureTransforms) -> np.ndarray:
    """One decoder pass over 13 rows; the last 7 outputs (days t+7..t+13) are the forecast, scaled units."""
    encoder, week = np.asarray(encoder), np.asarray(week)
    if encoder.ndim == 2:
        encoder, week = encoder[None], week[None]
        future_dow, future_month = np.atleast_2d(future_dow), np.atleast_2d(future_month)
    dec = vanilla_decoder_input(week, future_dow, future_month, transforms)
    out = model.predict(encoder, dec)
    return out[:, WEEK_LEN - 1:]


@dataclass
class MetricsReport:
    # (cluster, model, lead_day) -> (mae_kwh, n_windows)
    cells: dict[tuple[int, str, int], tuple[float, int]] = field(default_factory=dict)
    # (cluster, window_id, lead_day, y_true, y_pred, model)
    predictions: list[tuple[int, int, int, float, float, str]] = field(default_factory=list)

    def mae(self, cluster: int, model: str, lead_day: int) -> float:
        return self.cells[(cluster, model, lead_day)][0]

    def curve(self, cluster: int, model: str) -> np.ndarray:
        leads = sorted(k for c, m, k in self.cells if c == cluster and m == model)
        return np.array([self.mae(cluster, model, k) for k in leads])

    def clusters(self) -> list[int]:
        return sorted({c for c, _, _ in self.cells})

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for (cluster, model, lead), (value, n) in sorted(self.cells.items(),
                                                         key=lambda kv: (kv[0][0], MODELS.index(kv[0][1]), kv[0][2])):
            writer.writerow([cluster, model, lead, repr(value), n])
        return buf.getvalue()

    def predictions_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PREDICTIONS_HEADER)
        for cluster, wid, lead, y_true, y_pred, model in self.predictions:
            writer.writerow([cluster, wid, lead, repr(y_true), repr(y_pred), model])
        return buf.getvalue()


def forecast_all(ensemble: JitEnsemble | None, vanilla: Seq2SeqTransformer | None,
                 test: WindowBatch, transforms: FeatureTransforms) -> dict[str, np.ndarray]:
    """kWh forecasts ``(N, 7)`` per model name."""
    out = {"persistence": persistence_forecast(transforms.sma7.inverse(test.week[:, :, 0]))}
    if ensemble is not None:
        res = cascade_predict(ensemble, test.encoder, test.week, test.future_dow, test.future_month, transforms)
        out["jittrans"] = res.forecast_kwh
    if vanilla is not None:
        scaled = vanilla_forecast(vanilla, test.encoder, test.week, test.future_dow, test.future_month, transforms)
        out["vanilla"] = transforms.sma7.inverse(scaled)
    return out


def evaluate(forecasts: Mapping[int, Mapping[str, np.ndarray]],
             tests: Mapping[int, WindowBatch]) -> MetricsReport:
    """MAE per (cluster, model, lead day) from kWh forecasts against the test targets."""
    report = MetricsReport()
    for cluster in sorted(forecasts):
        test = tests[cluster]
        if len(test) == 0:
            raise ValueError(f"cluster {cluster} has an empty test set")
        truth = test.targets_kwh[:, WEEK_LEN - 1:]
        for model in MODELS:
            if model not in forecasts[cluster]:
                continue
            pred = forecasts[cluster][model]
            for k in range(1, pred.shape[1] + 1):
                report.cells[(cluster, model, k)] = (mae(pred[:, k - 1], truth[:, k - 1]), len(test))
            for w in range(len(test)):
                for k in range(1, pred.shape[1] + 1):
                    report.predictions.append(
                        (cluster, int(test.starts[w]), k, float(truth[w, k - 1]), float(pred[w, k - 1]), model))
    return report


def metrics_from_predictions(text: str) -> dict[tuple[int, str, int], float]:
    """Recompute every MAE cell from an exported predictions CSV."""
    acc: dict[tuple[int, str, int], list[float]] = {}
    for r in csv.DictReader(io.StringIO(text)):
        key = (int(r["cluster"]), r["model"], int(r["lead_day"]))
        acc.setdefault(key, []).append(abs(float(r["y_pred"]) - float(r["y_true"])))
    return {k: float(np.mean(v)) for k, v in acc.items()}
