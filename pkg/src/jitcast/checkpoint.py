"""Versioned checkpoint files: magic, JSON header, then raw little-endian float64 tensors.

Layout::

    b"JITCAST\\0"            8 bytes
    header length            uint64 little-endian
    header                   UTF-8 JSON (configs, tensor table, fitted transforms, ...)
    data                     concatenated '<f8' values in tensor-table order
"""

from __future__ import annotations

import datetime as dt
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .data import DailySeries, FeatureTransforms
from .ensemble import JitEnsemble, JitEnsembleConfig
from .transformer import ModelConfig, Seq2SeqTransformer

MAGIC = b"JITCAST\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    table, blocks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blocks.append(arr.tobytes())
        offset += arr.size
    header = dict(ckpt.header, format_version=FORMAT_VERSION, tensors=table, n_values=offset)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            for b in blocks:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (n_header,) = struct.unpack("<Q", blob[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + n_header > len(blob):
        raise TruncatedCheckpointError(f"{path}: header cut short")
    try:
        header = json.loads(blob[start:start + n_header].decode("utf-8"))
        version = header["format_version"]
        table = header["tensors"]
        n_values = int(header["n_values"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    data = blob[start + n_header:]
    if len(data) != 8 * n_values:
        if len(data) < 8 * n_values:
            raise TruncatedCheckpointError(f"{path}: tensor block has {len(data)} bytes, expected {8 * n_values}")
        raise CorruptCheckpointError(f"{path}: {len(data) - 8 * n_values} trailing bytes after the tensor block")
    values = np.frombuffer(data, dtype="<f8")
    tensors = {}
    for rec in table:
        lo, count = rec["offset"], rec["count"]
        if lo + count > n_values or int(np.prod(rec["shape"], dtype=np.int64)) != count:
            raise CorruptCheckpointError(f"{path}: bad tensor record {rec['name']}")
        tensors[rec["name"]] = values[lo:lo + count].reshape(rec["shape"]).astype(np.float64)
    for key in ("tensors", "n_values", "format_version"):
        header.pop(key)
    return Checkpoint(header, tensors)


# ---------------------------------------------------------------------------
# trained cluster state <-> checkpoint


@dataclass
class ClusterState:
    """Everything needed to forecast one cluster: models, transforms and the observed series."""

    cluster: int
    ensemble: JitEnsemble
    vanilla: Seq2SeqTransformer | None
    transforms: FeatureTransforms
    series: DailySeries
    seed: int
    centroid: np.ndarray | None = None
    members: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def to_checkpoint(state: ClusterState) -> Checkpoint:
    ens = state.ensemble
    tensors: dict[str, np.ndarray] = {}
    for j, model in enumerate(ens.models, start=1):
        for name, arr in model.weights.arrays().items():
            tensors[f"stage{j}/{name}"] = arr
    if state.vanilla is not None:
        for name, arr in state.vanilla.weights.arrays().items():
            tensors[f"vanilla/{name}"] = arr
    tensors["series/values"] = np.asarray(state.series.values)
    if state.centroid is not None:
        tensors["cluster/centroid"] = np.asarray(state.centroid)
    header = {
        "cluster": state.cluster,
        "model_config": ens.config.model.to_dict(),
        "n_models": ens.config.n_models,
        "trained_stages": ens.trained_stages,
        "has_vanilla": state.vanilla is not None,
        "transforms": state.transforms.to_dict(),
        "series_start": state.series.start_date.isoformat(),
        "series_id": state.series.customer_id,
        "seed": state.seed,
        "ensemble_seed": ens.seed,
        "members": list(state.members),
        "extra": state.extra,
    }
    return Checkpoint(header, tensors)


def from_checkpoint(ckpt: Checkpoint) -> ClusterState:
    h, t = ckpt.header, ckpt.tensors
    try:
        model_cfg = ModelConfig(**h["model_config"])
        ens_cfg = JitEnsembleConfig(n_models=h["n_models"], model=model_cfg)
        models = []
        for j in range(1, ens_cfg.n_models + 1):
            models.append(_restore(model_cfg, t, f"stage{j}/"))
        ens = JitEnsemble(ens_cfg, models, seed=h["ensemble_seed"])
        ens.trained_stages = h["trained_stages"]
        vanilla = _restore(model_cfg, t, "vanilla/") if h["has_vanilla"] else None
        series = DailySeries(h["series_id"], dt.date.fromisoformat(h["series_start"]), t["series/values"])
        return ClusterState(
            cluster=h["cluster"],
            ensemble=ens,
            vanilla=vanilla,
            transforms=FeatureTransforms.from_dict(h["transforms"]),
            series=series,
            seed=h["seed"],
            centroid=t.get("cluster/centroid"),
            members=list(h["members"]),
            extra=h.get("extra", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"checkpoint content is inconsistent: {exc}") from None


def _restore(cfg: ModelConfig, tensors: dict[str, np.ndarray], prefix: str) -> Seq2SeqTransformer:
    model = Seq2SeqTransformer(cfg, seed=0)
    model.weights.load_arrays({name[len(prefix):]: arr for name, arr in tensors.items() if name.startswith(prefix)})
    return model


def save_cluster_state(state: ClusterState, path) -> None:
    save_checkpoint(to_checkpoint(state), path)


def load_cluster_state(path) -> ClusterState:
    return from_checkpoint(load_checkpoint(path))
