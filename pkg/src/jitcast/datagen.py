"""Seeded synthetic smart-meter data drawn from behavioural archetypes."""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field

import numpy as np

# mean-1 intraday shape: low overnight, morning bump, evening peak
DAILY_SHAPE = np.array([
    0.55, 0.5, 0.48, 0.47, 0.48, 0.55, 0.8, 1.15, 1.2, 1.0, 0.9, 0.9,
    0.95, 0.95, 0.9, 0.9, 1.0, 1.25, 1.6, 1.75, 1.6, 1.35, 1.0, 0.75,
])
DAILY_SHAPE = DAILY_SHAPE / DAILY_SHAPE.mean()


@dataclass(frozen=True)
class ArchetypeSpec:
    name: str
    base_level: float
    weekly_profile: tuple[float, ...] = (1.0,) * 7
    annual_amplitude: float = 0.0
    trend_per_year: float = 0.0
    noise_std: float = 0.0
    count: int = 1

    def __post_init__(self):
        if self.base_level <= 0:
            raise ValueError("base_level must be positive")
        if len(self.weekly_profile) != 7 or min(self.weekly_profile) <= 0:
            raise ValueError("weekly_profile needs 7 positive multipliers")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.count < 0:
            raise ValueError("count must be non-negative")


def default_archetypes(per_archetype: int = 50) -> list[ArchetypeSpec]:
    """Four household types separated by level, weekly shape and seasonality."""
    return [
        ArchetypeSpec("low_flat", 0.25, (1.0, 1.0, 1.0, 1.0, 1.0, 1.05, 1.05),
                      annual_amplitude=0.10, trend_per_year=0.02, noise_std=0.02, count=per_archetype),
        ArchetypeSpec("commuter", 0.55, (0.85, 0.85, 0.85, 0.85, 0.9, 1.4, 1.4),
                      annual_amplitude=0.20, trend_per_year=0.03, noise_std=0.025, count=per_archetype),
        ArchetypeSpec("family", 0.95, (1.0, 1.0, 1.0, 1.0, 1.0, 1.2, 1.15),
                      annual_amplitude=0.30, trend_per_year=0.04, noise_std=0.03, count=per_archetype),
        ArchetypeSpec("heavy_winter", 1.6, (1.05, 1.05, 1.05, 1.05, 1.0, 0.9, 0.9),
                      annual_amplitude=0.45, trend_per_year=-0.03, noise_std=0.03, count=per_archetype),
    ]


@dataclass(frozen=True)
class GeneratorConfig:
    archetypes: tuple[ArchetypeSpec, ...] = field(default_factory=lambda: tuple(default_archetypes()))
    start_date: dt.date = dt.date(2020, 1, 1)
    n_days: int = 730
    seed: int = 0
    anomaly_rate: float = 0.0

    def __post_init__(self):
        if self.n_days < 60:
            raise ValueError("n_days must be >= 60")
        if not 0 <= self.anomaly_rate < 0.1:
            raise ValueError("anomaly_rate must be in [0, 0.1)")


@dataclass
class GeneratedData:
    customer_ids: list[str]
    labels: list[str]
    timestamps: np.ndarray  # datetime64[h], shared grid
    kwh: list[np.ndarray]  # per customer, NaN marks an injected gap

    def readings_csv(self) -> str:
        buf = io.StringIO()
        buf.write("Date_Time,customer_id,kWh\n")
        stamps = np.datetime_as_string(self.timestamps, unit="s")
        for cid, series in zip(self.customer_ids, self.kwh):
            keep = ~np.isnan(series)
            for stamp, value in zip(stamps[keep], series[keep]):
                buf.write(f"{stamp},{cid},{value:.6f}\n")
        return buf.getvalue()

    def labels_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["customer_id", "archetype"])
        writer.writerows(zip(self.customer_ids, self.labels))
        return buf.getvalue()

    def write(self, readings_path, labels_path) -> None:
        with open(readings_path, "w", newline="") as fh:
            fh.write(self.readings_csv())
        with open(labels_path, "w", newline="") as fh:
            fh.write(self.labels_csv())


def customer_profile(spec: ArchetypeSpec, start_date: dt.date, n_days: int) -> np.ndarray:
    """Noise-free hourly kWh for one customer of ``spec``."""
    days = np.arange(n_days)
    dates = [start_date + dt.timedelta(days=int(i)) for i in days]
    dow = np.array([d.weekday() for d in dates])
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=np.float64)
    weekly = np.asarray(spec.weekly_profile)[dow]
    seasonal = 1.0 + spec.annual_amplitude * np.sin(2 * np.pi * doy / 365.0)
    trend = 1.0 + spec.trend_per_year * days / 365.0
    daily = spec.base_level * weekly * seasonal * trend
    return (daily[:, None] * DAILY_SHAPE[None, :]).reshape(-1)


def generate(config: GeneratorConfig = GeneratorConfig()) -> GeneratedData:
    """Hourly readings for every customer; each customer draws from its own seeded sub-stream."""
    n_hours = config.n_days * 24
    start = np.datetime64(config.start_date, "h")
    timestamps = start + np.arange(n_hours) * np.timedelta64(1, "h")
    ids, labels, series = [], [], []
    root = np.random.SeedSequence(config.seed)
    n_total = sum(a.count for a in config.archetypes)
    streams = iter(root.spawn(n_total))
    width = max(4, len(str(n_total)))
    k = 0
    for spec in config.archetypes:
        clean = customer_profile(spec, config.start_date, config.n_days)
        for _ in range(spec.count):
            rng = np.random.default_rng(next(streams))
            values = np.clip(clean + rng.normal(0.0, spec.noise_std, size=n_hours), 0.0, None)
            if config.anomaly_rate > 0:
                _inject_anomalies(values, rng, config.anomaly_rate)
            ids.append(f"C{k:0{width}d}")
            labels.append(spec.name)
            series.append(values)
            k += 1
    return GeneratedData(ids, labels, timestamps, series)


def _inject_anomalies(values: np.ndarray, rng: np.random.Generator, rate: float) -> None:
    n = values.size
    if rng.random() < rate:
        # industrial-looking spike; cleaning drops the entry
        values[rng.integers(0, n)] = 12.5 + 10.0 * rng.random()
    if rng.random() < rate:
        # a gap of at least 24h; cleaning drops the customer
        length = int(rng.integers(25, 49))
        pos = int(rng.integers(24, n - length - 24))
        values[pos:pos + length] = np.nan
