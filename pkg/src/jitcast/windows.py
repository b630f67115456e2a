"""Sliding 43-day samples over a feature frame and chronological splitting."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import FeatureFrame

ENCODER_LEN = 30
WEEK_LEN = 7
HORIZON = 7
# encoder days t-29..t, observed week t..t+6 (day t shared), targets t+1..t+13
SPAN = ENCODER_LEN + WEEK_LEN - 1 + HORIZON
N_TARGETS = WEEK_LEN - 1 + HORIZON


@dataclass
class WindowSample:
    """One forecast situation; ``origin`` is day t+6, the last observed day."""

    start: int
    start_date: dt.date
    encoder: np.ndarray  # (30, F)
    week: np.ndarray  # (7, F)
    targets: np.ndarray  # (13,) scaled sma7 for days t+1..t+13
    targets_kwh: np.ndarray  # (13,)
    future_dow: np.ndarray  # (7,) calendar of days t+7..t+13
    future_month: np.ndarray  # (7,)

    @property
    def day_span(self) -> tuple[int, int]:
        return self.start, self.start + SPAN - 1

    @property
    def origin_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=ENCODER_LEN + WEEK_LEN - 2)


@dataclass
class WindowBatch:
    """Stacked arrays of many samples, all sharing one layout."""

    encoder: np.ndarray
    week: np.ndarray
    targets: np.ndarray
    targets_kwh: np.ndarray
    future_dow: np.ndarray
    future_month: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return len(self.starts)

    @classmethod
    def stack(cls, samples: Sequence[WindowSample]) -> "WindowBatch":
        if not samples:
            raise ValueError("cannot stack an empty window list")
        return cls(
            np.stack([s.encoder for s in samples]),
            np.stack([s.week for s in samples]),
            np.stack([s.targets for s in samples]),
            np.stack([s.targets_kwh for s in samples]),
            np.stack([s.future_dow for s in samples]),
            np.stack([s.future_month for s in samples]),
            np.array([s.start for s in samples]),
        )

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(self.encoder[idx], self.week[idx], self.targets[idx], self.targets_kwh[idx],
                           self.future_dow[idx], self.future_month[idx], self.starts[idx])


def make_windows(frame: FeatureFrame) -> list[WindowSample]:
    n = len(frame)
    if n < SPAN:
        raise ValueError(f"series has {n} days; windowing needs at least {SPAN}")
    rows = frame.model_rows()
    scaled = rows[:, 0]
    out = []
    for s in range(n - SPAN + 1):
        t = s + ENCODER_LEN - 1
        future = slice(t + WEEK_LEN, t + WEEK_LEN + HORIZON)
        out.append(WindowSample(
            start=s,
            start_date=frame.date(s),
            encoder=rows[s:t + 1],
            week=rows[t:t + WEEK_LEN],
            targets=scaled[t + 1:t + 1 + N_TARGETS],
            targets_kwh=frame.sma7[t + 1:t + 1 + N_TARGETS],
            future_dow=frame.day_of_week[future],
            future_month=frame.month[future],
        ))
    return out


def split_chronological(samples: Sequence, fractions=(0.8, 0.1, 0.1), purge: int = 0):
    """Contiguous train/val/test blocks; val and test sizes are floored, the remainder goes to train.

    ``purge`` drops that many samples at the head of val and of test so their
    day spans cannot overlap the block before (use ``SPAN - 1`` for windows).
    """
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(samples)
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    train = list(samples[:n_train])
    val = list(samples[n_train + purge:n_train + n_val])
    test = list(samples[n_train + n_val + purge:])
    if not train or not val or not test:
        raise ValueError(f"split of {n} samples leaves an empty block "
                         f"(train={len(train)}, val={len(val)}, test={len(test)})")
    return train, val, test


def fit_days_for(n_days: int, fractions=(0.8, 0.1, 0.1)) -> int:
    """Number of leading days covered by training windows, used to fit scalers without leakage."""
    n_samples = n_days - SPAN + 1
    n_val = int(np.floor(n_samples * fractions[1] + 1e-9))
    n_test = int(np.floor(n_samples * fractions[2] + 1e-9))
    n_train = n_samples - n_val - n_test
    return n_train + SPAN - 1
