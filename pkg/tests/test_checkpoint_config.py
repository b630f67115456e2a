import datetime as dt
import json
import struct

import numpy as np
import pytest
from conftest import seasonal_series

from jitcast.checkpoint import (MAGIC, Checkpoint, CheckpointVersionError, ClusterState, CorruptCheckpointError,
                                TruncatedCheckpointError, load_checkpoint, load_cluster_state, save_checkpoint,
                                save_cluster_state)
from jitcast.config import ConfigFileError, RunConfig, dump_config, load_config, parse_config
from jitcast.data import build_feature_frame
from jitcast.ensemble import JitEnsembleConfig, build_ensemble, cascade_predict
from jitcast.evaluation import build_vanilla
from jitcast.windows import WindowBatch, make_windows


@pytest.fixture
def state(tiny_config):
    series = seasonal_series(90, noise=0.01)
    frame = build_feature_frame(series)
    ens = build_ensemble(JitEnsembleConfig(model=tiny_config), seed=9)
    ens.trained_stages = 7
    return ClusterState(2, ens, build_vanilla(tiny_config, 1), frame.transforms, series, seed=9,
                        centroid=np.arange(20.0), members=["a", "b"], extra={"note": [1, 2]}), frame


def test_round_trip_is_bit_exact(state, tmp_path):
    st, frame = state
    path = tmp_path / "m.ckpt"
    save_cluster_state(st, path)
    back = load_cluster_state(path)
    batch = WindowBatch.stack(make_windows(frame))
    args = (batch.encoder, batch.week, batch.future_dow, batch.future_month)
    a = cascade_predict(st.ensemble, *args, st.transforms)
    b = cascade_predict(back.ensemble, *args, back.transforms)
    assert np.array_equal(a.forecast_kwh, b.forecast_kwh)
    assert back.transforms == st.transforms
    np.testing.assert_array_equal(back.series.values, st.series.values)
    assert back.series.start_date == st.series.start_date
    np.testing.assert_array_equal(back.vanilla.weights.arrays()["head.w"], st.vanilla.weights.arrays()["head.w"])
    assert (back.cluster, back.members, back.extra, back.ensemble.trained_stages) == (2, ["a", "b"], {"note": [1, 2]}, 7)


def test_raw_layout(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(Checkpoint({"k": 1}, {"w": np.array([[1.5, -2.0]])}), path)
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + n])
    assert header["tensors"] == [{"name": "w", "shape": [1, 2], "offset": 0, "count": 2}]
    assert np.frombuffer(blob[16 + n:], "<f8").tolist() == [1.5, -2.0]
    assert load_checkpoint(path).header == {"k": 1}


def rewrite_header(path, change):
    blob = path.read_bytes()
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + n])
    change(header)
    raw = json.dumps(header).encode()
    path.write_bytes(MAGIC + struct.pack("<Q", len(raw)) + raw + blob[16 + n:])


def test_distinct_errors(state, tmp_path):
    st, _ = state
    path = tmp_path / "m.ckpt"
    save_cluster_state(st, path)
    good = path.read_bytes()

    path.write_bytes(good[:-8])
    with pytest.raises(TruncatedCheckpointError):
        load_cluster_state(path)
    path.write_bytes(good[:20])
    with pytest.raises(TruncatedCheckpointError):
        load_cluster_state(path)
    path.write_bytes(b"NOTACKPT" + good[8:])
    with pytest.raises(CorruptCheckpointError):
        load_cluster_state(path)
    path.write_bytes(good[:16] + b"#" + good[17:])
    with pytest.raises(CorruptCheckpointError):
        load_cluster_state(path)
    path.write_bytes(good)
    rewrite_header(path, lambda h: h.update(format_version=2))
    with pytest.raises(CheckpointVersionError):
        load_cluster_state(path)


def test_failed_save_leaves_old_file(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint({}, {"w": np.ones(2)}), path)
    before = path.read_bytes()
    with pytest.raises(TypeError):
        save_checkpoint(Checkpoint({"bad": object()}, {"w": np.ones(3)}), path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]


def test_config_parsing():
    cfg = parse_config("""
        # comment
        seed = 5
        generator.start_date = 2019-06-01
        model.d_model = 16
        train.fractions = 0.7, 0.2, 0.1
        train.vanilla = false
        cluster.k = 4
    """)
    assert cfg.seed == 5 and cfg.generator_start_date == dt.date(2019, 6, 1)
    assert cfg.model.d_model == 16 and cfg.model.n_heads == 4
    assert cfg.train.fractions == (0.7, 0.2, 0.1) and not cfg.train_vanilla and cfg.cluster.k == 4
    assert cfg.train_config().seed == 5
    assert cfg.generator().seed == 5


@pytest.mark.parametrize("text", ["bogus = 1", "seed", "seed = x", "model.d_model = 10", "train.fractions = 1,2"])
def test_config_errors(text):
    with pytest.raises(ConfigFileError):
        parse_config(text)


def test_defaults_dump_and_env(tmp_path):
    assert parse_config(dump_config(RunConfig())) == RunConfig()
    path = tmp_path / "c.cfg"
    path.write_text("seed = 3\n")
    assert load_config(path, env={}).seed == 3
    assert load_config(path, env={"JITCAST_SEED": "11"}).seed == 11
    with pytest.raises(ConfigFileError):
        load_config(path, env={"JITCAST_SEED": "eleven"})
