"""Smart-meter ingestion, cleaning, daily aggregation and feature engineering."""

from __future__ import annotations

import csv
import datetime as dt
import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

CSV_HEADER = ("Date_Time", "customer_id", "kWh")
HOUR = np.timedelta64(1, "h")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = f"{source or '<csv>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class DegenerateScaleError(ValueError):
    pass


@dataclass
class CustomerReadings:
    """Hourly readings of one customer, sorted by time."""

    customer_id: str
    timestamps: np.ndarray  # datetime64[h]
    kwh: np.ndarray

    def __len__(self) -> int:
        return len(self.kwh)


@dataclass
class DailySeries:
    customer_id: str
    start_date: dt.date
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self.values))]


@dataclass(frozen=True)
class CleaningRules:
    max_hourly_kwh: float = 12.0
    low_usage_mean_kwh: float = 0.05
    require_continuity: bool = True

    def __post_init__(self):
        if not self.max_hourly_kwh > self.low_usage_mean_kwh >= 0:
            raise ValueError("need max_hourly_kwh > low_usage_mean_kwh >= 0")


@dataclass
class CleaningReport:
    customers_in: int = 0
    customers_out: int = 0
    entries_over_max: int = 0
    customers_low_usage: int = 0
    customers_discontinuous: int = 0
    customers_empty: int = 0
    rejected: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "customers_in": self.customers_in,
            "customers_out": self.customers_out,
            "entries_over_max": self.entries_over_max,
            "customers_low_usage": self.customers_low_usage,
            "customers_discontinuous": self.customers_discontinuous,
            "customers_empty": self.customers_empty,
            "rejected": dict(sorted(self.rejected.items())),
        }


# ---------------------------------------------------------------------------
# ingestion


def _parse_timestamp(text: str) -> np.datetime64:
    stamp = dt.datetime.fromisoformat(text.strip())
    if stamp.minute or stamp.second or stamp.microsecond or stamp.tzinfo is not None:
        raise ValueError(f"timestamp {text!r} is not on the hour")
    return np.datetime64(stamp, "h")


def parse_readings(sources: str | os.PathLike | io.TextIOBase | Sequence) -> dict[str, CustomerReadings]:
    """Read one or more ``Date_Time,customer_id,kWh`` CSVs into per-customer sorted groups."""
    if isinstance(sources, (str, os.PathLike, io.TextIOBase)):
        sources = [sources]
    stamps, ids, kwh = [], [], []
    for source in sources:
        if isinstance(source, (str, os.PathLike)):
            with open(source, newline="") as fh:
                parts = _read_columns(fh, str(source))
        else:
            parts = _read_columns(source, getattr(source, "name", None))
        stamps.append(parts[0])
        ids.append(parts[1])
        kwh.append(parts[2])
    stamps = np.concatenate(stamps) if stamps else np.array([], dtype="datetime64[h]")
    ids = np.concatenate(ids) if ids else np.array([], dtype=str)
    kwh = np.concatenate(kwh) if kwh else np.array([])

    order = np.lexsort((stamps, ids))
    stamps, ids, kwh = stamps[order], ids[order], kwh[order]
    bounds = np.flatnonzero(ids[1:] != ids[:-1]) + 1
    groups = {}
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(ids)]):
        if hi <= lo:
            continue
        cid = str(ids[lo])
        ts = stamps[lo:hi]
        dup = np.flatnonzero(np.diff(ts) == np.timedelta64(0, "h"))
        if dup.size:
            raise ParseError(f"duplicate reading for customer {cid} at {ts[dup[0]]}")
        groups[cid] = CustomerReadings(cid, ts.copy(), kwh[lo:hi].copy())
    return groups


def _read_columns(fh, source_name):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {header}", 1, source_name)
    rows = [r for r in reader]
    lines = [i + 2 for i, r in enumerate(rows) if r]
    rows = [r for r in rows if r]
    for line, r in zip(lines, rows):
        if len(r) != 3:
            raise ParseError(f"expected 3 fields, got {len(r)}", line, source_name)
    if not rows:
        return np.array([], dtype="datetime64[h]"), np.array([], dtype=str), np.array([])
    raw_stamps, raw_ids, raw_kwh = zip(*rows)
    try:
        full = np.array(raw_stamps, dtype="datetime64[s]")
        kwh = np.array(raw_kwh, dtype=np.float64)
    except ValueError:
        _locate_bad_row(rows, lines, source_name)
        raise
    stamps = full.astype("datetime64[h]")
    off_hour = np.flatnonzero(stamps.astype("datetime64[s]") != full)
    if off_hour.size:
        raise ParseError(f"timestamp {raw_stamps[off_hour[0]]!r} is not on the hour",
                         lines[off_hour[0]], source_name)
    bad = np.flatnonzero(~np.isfinite(kwh) | (kwh < 0))
    if bad.size:
        raise ParseError(f"kWh must be a non-negative number, got {raw_kwh[bad[0]]!r}",
                         lines[bad[0]], source_name)
    ids = np.array([c.strip() for c in raw_ids])
    empty = np.flatnonzero(ids == "")
    if empty.size:
        raise ParseError("empty customer_id", lines[empty[0]], source_name)
    return stamps, ids, kwh


def _locate_bad_row(rows, lines, source_name):
    for line, r in zip(lines, rows):
        try:
            _parse_timestamp(r[0])
            float(r[2])
        except ValueError as exc:
            raise ParseError(str(exc), line, source_name) from None


# ---------------------------------------------------------------------------
# cleaning


def clean_customers(groups: Mapping[str, CustomerReadings],
                    rules: CleaningRules = CleaningRules()) -> tuple[dict[str, CustomerReadings], CleaningReport]:
    """Drop over-limit entries, then low-usage customers, then customers with a gap of 24h or more."""
    report = CleaningReport(customers_in=len(groups))
    kept = {}
    for cid in sorted(groups):
        g = groups[cid]
        ok = g.kwh <= rules.max_hourly_kwh
        report.entries_over_max += int((~ok).sum())
        stamps, kwh = g.timestamps[ok], g.kwh[ok]
        if kwh.size == 0:
            report.customers_empty += 1
            report.rejected[cid] = "empty"
            continue
        if kwh.mean() < rules.low_usage_mean_kwh:
            report.customers_low_usage += 1
            report.rejected[cid] = "low_usage"
            continue
        if rules.require_continuity and stamps.size > 1 and np.any(np.diff(stamps) >= 24 * HOUR):
            report.customers_discontinuous += 1
            report.rejected[cid] = "discontinuous"
            continue
        kept[cid] = CustomerReadings(cid, stamps, kwh)
    report.customers_out = len(kept)
    return kept, report


# ---------------------------------------------------------------------------
# daily aggregation and features


def daily_aggregate(group: CustomerReadings) -> DailySeries:
    """Mean hourly kWh per calendar day; partial days at either end are dropped.

    Interior days are expected to be complete (the group has passed cleaning);
    any interior day that is short is averaged over the readings it has.
    """
    if len(group) == 0:
        raise ValueError(f"customer {group.customer_id} has no readings")
    days = group.timestamps.astype("datetime64[D]")
    first, last = days[0], days[-1]
    n_days = int((last - first).astype(int)) + 1
    idx = (days - first).astype(int)
    counts = np.bincount(idx, minlength=n_days)
    sums = np.bincount(idx, weights=group.kwh, minlength=n_days)
    lo, hi = 0, n_days
    if counts[0] < 24:
        lo = 1
    if hi > lo and counts[hi - 1] < 24:
        hi -= 1
    if hi <= lo:
        raise ValueError(f"customer {group.customer_id} has no complete day")
    values = sums[lo:hi] / counts[lo:hi]
    start = (first + np.timedelta64(lo, "D")).astype(dt.date)
    return DailySeries(group.customer_id, start, values)


def sma(values: Sequence[float], window: int = 7) -> np.ndarray:
    """Trailing simple moving average; the first ``window - 1`` days average what is available."""
    x = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    csum = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(1, x.size + 1)
    lo = np.maximum(0, i - window)
    return (csum[i] - csum[lo]) / (i - lo)


def calendar_features(start_date: dt.date | str, n_days: int) -> np.ndarray:
    """Rows of (day_of_week with Monday=0, month, year), one per day."""
    if isinstance(start_date, str):
        start_date = dt.date.fromisoformat(start_date)
    out = np.empty((n_days, 3), dtype=np.int64)
    for i in range(n_days):
        d = start_date + dt.timedelta(days=i)
        out[i] = (d.weekday(), d.month, d.year)
    return out


@dataclass(frozen=True)
class RobustScaler:
    median: float
    iqr: float

    @classmethod
    def fit(cls, values) -> "RobustScaler":
        x = np.asarray(values, dtype=np.float64)
        if np.unique(x).size < 2:
            raise DegenerateScaleError("robust scaling needs at least two distinct values")
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
        if q3 - q1 == 0:
            raise DegenerateScaleError("interquartile range is zero")
        return cls(float(med), float(q3 - q1))

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.median) / self.iqr

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.iqr + self.median


@dataclass(frozen=True)
class StandardScaler:
    mean: float
    std: float

    @classmethod
    def fit(cls, values) -> "StandardScaler":
        x = np.asarray(values, dtype=np.float64)
        if x.size < 2:
            raise DegenerateScaleError("standard scaling needs at least two values")
        std = float(x.std())
        if std == 0:
            raise DegenerateScaleError("standard deviation is zero")
        return cls(float(x.mean()), std)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def scale_robust(values, fitted: RobustScaler | None = None) -> tuple[np.ndarray, RobustScaler]:
    fitted = fitted or RobustScaler.fit(values)
    return fitted.transform(values), fitted


def scale_standard(values, fitted: StandardScaler | None = None) -> tuple[np.ndarray, StandardScaler]:
    fitted = fitted or StandardScaler.fit(values)
    return fitted.transform(values), fitted


@dataclass(frozen=True)
class PCA1:
    """First principal axis of a centred 3-column block."""

    mean: tuple[float, ...]
    axis: tuple[float, ...]
    explained_variance_ratio: float

    def project(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        return (rows - np.asarray(self.mean)) @ np.asarray(self.axis)


def fit_pca(rows) -> PCA1:
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs a 2-D matrix with at least two rows")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    total = evals.sum()
    if total <= 0 or evals[-1] <= 0:
        raise ValueError("PCA input has rank 0")
    axis = evecs[:, -1]
    first = np.flatnonzero(np.abs(axis) > 1e-15)[0]
    if axis[first] < 0:
        axis = -axis
    return PCA1(tuple(mu.tolist()), tuple(axis.tolist()), float(evals[-1] / total))


# ---------------------------------------------------------------------------
# feature frame


@dataclass(frozen=True)
class FeatureTransforms:
    """Fitted parameters that turn (sma7 kWh, calendar) into model input rows."""

    sma7: RobustScaler
    day_of_week: StandardScaler
    context: tuple[StandardScaler, StandardScaler, StandardScaler]
    pca: PCA1

    def context_reduced(self, sma7_kwh, day_of_week, month) -> np.ndarray:
        cols = [np.asarray(c, dtype=np.float64) for c in (sma7_kwh, day_of_week, month)]
        block = np.stack([s.transform(c) for s, c in zip(self.context, cols)], axis=-1)
        return self.pca.project(block)

    def rows(self, sma7_kwh, day_of_week, month) -> np.ndarray:
        """Model input rows ``(sma7 scaled, day_of_week scaled, context_reduced)``."""
        return np.stack(
            [
                self.sma7.transform(sma7_kwh),
                self.day_of_week.transform(day_of_week),
                self.context_reduced(sma7_kwh, day_of_week, month),
            ],
            axis=-1,
        )

    def to_dict(self) -> dict:
        return {
            "sma7": [self.sma7.median, self.sma7.iqr],
            "day_of_week": [self.day_of_week.mean, self.day_of_week.std],
            "context": [[s.mean, s.std] for s in self.context],
            "pca": {
                "mean": list(self.pca.mean),
                "axis": list(self.pca.axis),
                "explained_variance_ratio": self.pca.explained_variance_ratio,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureTransforms":
        return cls(
            RobustScaler(*d["sma7"]),
            StandardScaler(*d["day_of_week"]),
            tuple(StandardScaler(*c) for c in d["context"]),
            PCA1(tuple(d["pca"]["mean"]), tuple(d["pca"]["axis"]), d["pca"]["explained_variance_ratio"]),
        )

    @classmethod
    def fit(cls, sma7_kwh, day_of_week, month) -> "FeatureTransforms":
        sma7_kwh, day_of_week, month = (np.asarray(a, dtype=np.float64) for a in (sma7_kwh, day_of_week, month))
        context = tuple(StandardScaler.fit(c) for c in (sma7_kwh, day_of_week, month))
        block = np.stack([s.transform(c) for s, c in zip(context, (sma7_kwh, day_of_week, month))], axis=-1)
        return cls(RobustScaler.fit(sma7_kwh), StandardScaler.fit(day_of_week), context, fit_pca(block))


@dataclass
class FeatureFrame:
    """Per-day features of one series plus the transforms that produced the model rows."""

    start_date: dt.date
    sma7: np.ndarray
    day_of_week: np.ndarray
    month: np.ndarray
    year: np.ndarray
    context_reduced: np.ndarray
    transforms: FeatureTransforms

    def __len__(self) -> int:
        return len(self.sma7)

    def model_rows(self) -> np.ndarray:
        return np.stack(
            [
                self.transforms.sma7.transform(self.sma7),
                self.transforms.day_of_week.transform(self.day_of_week),
                self.context_reduced,
            ],
            axis=-1,
        )

    def date(self, i: int) -> dt.date:
        return self.start_date + dt.timedelta(days=int(i))


def build_feature_frame(series: DailySeries, fit_days: int | None = None, window: int = 7) -> FeatureFrame:
    """Smooth, add calendar fields and fit the scalers/PCA on the first ``fit_days`` days."""
    smoothed = sma(series.values, window)
    cal = calendar_features(series.start_date, len(smoothed))
    n_fit = len(smoothed) if fit_days is None else fit_days
    transforms = FeatureTransforms.fit(smoothed[:n_fit], cal[:n_fit, 0], cal[:n_fit, 1])
    return FeatureFrame(
        start_date=series.start_date,
        sma7=smoothed,
        day_of_week=cal[:, 0],
        month=cal[:, 1],
        year=cal[:, 2],
        context_reduced=transforms.context_reduced(smoothed, cal[:, 0], cal[:, 1]),
        transforms=transforms,
    )


def average_series(series: Iterable[DailySeries], name: str = "average") -> DailySeries:
    """Day-aligned mean over the date range every input covers."""
    series = list(series)
    if not series:
        raise ValueError("no series to average")
    start = max(s.start_date for s in series)
    end = min(s.start_date + dt.timedelta(days=len(s) - 1) for s in series)
    n = (end - start).days + 1
    if n < 1:
        raise ValueError("series do not share any day")
    stack = np.stack([s.values[(start - s.start_date).days:(start - s.start_date).days + n] for s in series])
    return DailySeries(name, start, stack.mean(axis=0))
