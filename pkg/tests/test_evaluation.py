import numpy as np
import pytest
from conftest import seasonal_series

from jitcast.data import build_feature_frame
from jitcast.ensemble import JitEnsembleConfig, build_ensemble
from jitcast.evaluation import (METRICS_HEADER, build_vanilla, evaluate, forecast_all, mae, metrics_from_predictions,
                                persistence_forecast, vanilla_decoder_input, vanilla_forecast)
from jitcast.windows import WindowBatch, make_windows


def test_mae_and_errors():
    assert mae([1, 2, 3], [2, 2, 5]) == 1.0
    with pytest.raises(ValueError):
        mae([1], [1, 2])
    with pytest.raises(ValueError):
        mae([], [])


def test_persistence_on_ramp():
    np.testing.assert_array_equal(persistence_forecast(np.arange(1.0, 8.0)), np.full(7, 7.0))
    assert persistence_forecast(np.ones((3, 7))).shape == (3, 7)


@pytest.fixture
def pieces(tiny_config):
    frame = build_feature_frame(seasonal_series(90, noise=0.01))
    batch = WindowBatch.stack(make_windows(frame))
    return frame, batch, tiny_config


def test_vanilla_input_and_output(pieces):
    frame, batch, cfg = pieces
    dec = vanilla_decoder_input(batch.week, batch.future_dow, batch.future_month, frame.transforms)
    assert dec.shape == (len(batch), 13, 3)
    np.testing.assert_allclose(dec[:, 7:, 0], np.repeat(batch.week[:, -1:, 0], 6, axis=1), atol=1e-12)
    out = vanilla_forecast(build_vanilla(cfg, 0), batch.encoder, batch.week, batch.future_dow, batch.future_month,
                           frame.transforms)
    assert out.shape == (len(batch), 7)


def test_untrained_zero_head_models_equal_persistence(pieces):
    frame, batch, _ = pieces
    from jitcast.transformer import ModelConfig
    cfg = ModelConfig(d_model=8, n_heads=2, d_ff=16, n_encoder_layers=1, n_decoder_layers=1)
    f = forecast_all(build_ensemble(JitEnsembleConfig(model=cfg)), build_vanilla(cfg, 0), batch, frame.transforms)
    np.testing.assert_allclose(f["jittrans"], f["persistence"], atol=1e-12)
    np.testing.assert_allclose(f["vanilla"], f["persistence"], atol=1e-12)


def test_report_shapes_and_recomputation(pieces):
    frame, batch, cfg = pieces
    f = forecast_all(build_ensemble(JitEnsembleConfig(model=cfg)), build_vanilla(cfg, 0), batch, frame.transforms)
    report = evaluate({0: f, 1: f}, {0: batch, 1: batch})
    lines = report.metrics_csv().splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert len(lines) == 1 + 2 * 3 * 7
    recomputed = metrics_from_predictions(report.predictions_csv())
    for key, (value, n) in report.cells.items():
        assert recomputed[key] == pytest.approx(value, rel=1e-12)
        assert n == len(batch)
    truth = batch.targets_kwh[:, 6:]
    assert report.mae(0, "persistence", 3) == pytest.approx(np.abs(f["persistence"][:, 2] - truth[:, 2]).mean())
    assert report.curve(1, "jittrans").shape == (7,)


def test_persistence_mae_on_ramp_equals_lead_day():
    import datetime as dt

    from jitcast.data import DailySeries
    frame = build_feature_frame(DailySeries("ramp", dt.date(2021, 1, 1), np.arange(80.0)))
    batch = WindowBatch.stack(make_windows(frame))
    f = forecast_all(None, None, batch, frame.transforms)
    report = evaluate({0: f}, {0: batch})
    np.testing.assert_allclose(report.curve(0, "persistence"), np.arange(1.0, 8.0), atol=1e-9)


def test_kwh_mae_is_scaled_mae_times_iqr(pieces):
    frame, batch, cfg = pieces
    ens = build_ensemble(JitEnsembleConfig(model=cfg), seed=1)
    from jitcast.ensemble import cascade_predict
    res = cascade_predict(ens, batch.encoder, batch.week, batch.future_dow, batch.future_month, frame.transforms)
    scaled_truth = batch.targets[:, 6:]
    kwh_truth = batch.targets_kwh[:, 6:]
    for k in range(7):
        assert mae(res.forecast_kwh[:, k], kwh_truth[:, k]) == pytest.approx(
            mae(res.forecast[:, k], scaled_truth[:, k]) * frame.transforms.sma7.iqr, abs=1e-9)


def test_single_stage_cascade_forecasts_one_day(pieces):
    frame, batch, cfg = pieces
    ens = build_ensemble(JitEnsembleConfig(n_models=1, model=cfg), seed=2)
    f = forecast_all(ens, None, batch, frame.transforms)
    assert f["jittrans"].shape == (len(batch), 1)
    report = evaluate({0: f}, {0: batch})
    assert report.curve(0, "jittrans").shape == (1,)
    assert "0,jittrans,1," in report.metrics_csv()
