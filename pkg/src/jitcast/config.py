"""Flat ``key = value`` run configuration covering every tunable in the pipeline."""

from __future__ import annotations

import dataclasses
import datetime as dt
import os
from dataclasses import dataclass, field

from .data import CleaningRules
from .datagen import GeneratorConfig, default_archetypes
from .ensemble import JitEnsembleConfig
from .training import TrainConfig
from .transformer import ModelConfig

SEED_ENV = "JITCAST_SEED"


class ConfigFileError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    k_max: int = 10
    n_init: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    # 0 means: pick k from the elbow of the inertia curve
    k: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    generator_n_days: int = 730
    generator_start_date: dt.date = dt.date(2020, 1, 1)
    generator_per_archetype: int = 50
    generator_anomaly_rate: float = 0.0
    cleaning: CleaningRules = field(default_factory=CleaningRules)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    n_models: int = 7
    train: TrainConfig = field(default_factory=TrainConfig)
    train_vanilla: bool = True

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(
            archetypes=tuple(default_archetypes(self.generator_per_archetype)),
            start_date=self.generator_start_date,
            n_days=self.generator_n_days,
            seed=self.seed,
            anomaly_rate=self.generator_anomaly_rate,
        )

    def ensemble(self) -> JitEnsembleConfig:
        return JitEnsembleConfig(n_models=self.n_models, model=self.model)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)


# key -> (path into RunConfig, parser)
def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fractions(text: str) -> tuple[float, float, float]:
    parts = tuple(float(p) for p in text.split(","))
    if len(parts) != 3:
        raise ValueError("fractions need three comma-separated numbers")
    return parts


KEYS = {
    "seed": ((), "seed", int),
    "generator.n_days": ((), "generator_n_days", int),
    "generator.start_date": ((), "generator_start_date", dt.date.fromisoformat),
    "generator.per_archetype": ((), "generator_per_archetype", int),
    "generator.anomaly_rate": ((), "generator_anomaly_rate", float),
    "cleaning.max_hourly_kwh": (("cleaning",), "max_hourly_kwh", float),
    "cleaning.low_usage_mean_kwh": (("cleaning",), "low_usage_mean_kwh", float),
    "cleaning.require_continuity": (("cleaning",), "require_continuity", _bool),
    "cluster.k_max": (("cluster",), "k_max", int),
    "cluster.n_init": (("cluster",), "n_init", int),
    "cluster.max_iter": (("cluster",), "max_iter", int),
    "cluster.tol": (("cluster",), "tol", float),
    "cluster.k": (("cluster",), "k", int),
    "model.d_model": (("model",), "d_model", int),
    "model.n_heads": (("model",), "n_heads", int),
    "model.d_ff": (("model",), "d_ff", int),
    "model.n_encoder_layers": (("model",), "n_encoder_layers", int),
    "model.n_decoder_layers": (("model",), "n_decoder_layers", int),
    "model.value_skip": (("model",), "value_skip", _bool),
    "model.zero_init_head": (("model",), "zero_init_head", _bool),
    "ensemble.n_models": ((), "n_models", int),
    "train.epochs": (("train",), "epochs", int),
    "train.batch_size": (("train",), "batch_size", int),
    "train.learning_rate": (("train",), "learning_rate", float),
    "train.fractions": (("train",), "fractions", _fractions),
    "train.vanilla": ((), "train_vanilla", _bool),
}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigFileError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key][2](value)
        except ValueError as exc:
            raise ConfigFileError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return build_config(values)


def build_config(values: dict[str, object]) -> RunConfig:
    top: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {}
    for key, value in values.items():
        path, name, _ = KEYS[key]
        if path:
            nested.setdefault(path[0], {})[name] = value
        else:
            top[name] = value
    base = RunConfig()
    try:
        for section, fields in nested.items():
            top[section] = dataclasses.replace(getattr(base, section), **fields)
        cfg = dataclasses.replace(base, **top)
        cfg.generator()
        cfg.ensemble()
    except (ValueError, TypeError) as exc:
        raise ConfigFileError(str(exc)) from None
    return cfg


def load_config(path: str | os.PathLike | None, env: dict | None = None) -> RunConfig:
    """Read a config file (or defaults when ``path`` is None); ``JITCAST_SEED`` overrides ``seed``."""
    env = os.environ if env is None else env
    if path is None:
        cfg = RunConfig()
    else:
        with open(path) as fh:
            cfg = parse_config(fh.read(), str(path))
    if env.get(SEED_ENV):
        try:
            cfg = dataclasses.replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigFileError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, (path, name, _) in KEYS.items():
        obj = getattr(cfg, path[0]) if path else cfg
        value = getattr(obj, name)
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        elif isinstance(value, dt.date):
            value = value.isoformat()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
