"""Consumer segmentation: profile vectors, multi-start Lloyd k-means, elbow selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DailySeries

log = logging.getLogger(__name__)

MIN_PROFILE_DAYS = 60


@dataclass
class ProfileVector:
    customer_id: str
    features: np.ndarray  # [mean kWh, 7 weekday ratios, 12 month ratios]


def profile_vector(series: DailySeries) -> ProfileVector:
    values = np.asarray(series.values, dtype=np.float64)
    dates = series.dates
    dow = np.array([d.weekday() for d in dates])
    month = np.array([d.month for d in dates])
    level = values.mean()
    week = np.array([values[dow == i].mean() for i in range(7)])
    months = np.full(12, np.nan)
    for m in range(1, 13):
        sel = month == m
        if sel.any():
            months[m - 1] = values[sel].mean()
    if level > 0:
        week = week / week.mean()
        observed = ~np.isnan(months)
        months[observed] = months[observed] / months[observed].mean()
    else:
        week = np.ones(7)
        months = np.where(np.isnan(months), np.nan, 1.0)
    # months never observed sit at the neutral ratio
    months = np.where(np.isnan(months), 1.0, months)
    return ProfileVector(series.customer_id, np.concatenate([[level], week, months]))


def build_profile_vectors(series: Sequence[DailySeries],
                          min_days: int = MIN_PROFILE_DAYS) -> list[ProfileVector]:
    out = []
    for s in series:
        if len(s) < min_days:
            log.warning("skipping customer %s: %d days < %d", s.customer_id, len(s), min_days)
            continue
        out.append(profile_vector(s))
    return out


BLOCKS = ((0, 1), (1, 8), (8, 20))


def standardize_blocks(features: np.ndarray, blocks=BLOCKS) -> np.ndarray:
    """Centre each column, then scale each block so it carries unit total variance across customers."""
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(axis=0)
    out = np.empty_like(x)
    for lo, hi in blocks:
        block = x[:, lo:hi]
        total = np.sqrt((block**2).sum(axis=1).mean())
        out[:, lo:hi] = block / total if total > 0 else block
    return out


# ---------------------------------------------------------------------------
# k-means


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    seed: int
    n_init: int


def inertia(x, centroids, labels) -> float:
    x = np.asarray(x, dtype=np.float64)
    diff = x - np.asarray(centroids)[np.asarray(labels)]
    return float(np.einsum("ij,ij->", diff, diff))


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp_indices(x: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    """k-means++ seeding: a uniform first point, then draws proportional to squared distance."""
    chosen = [int(rng.integers(x.shape[0]))]
    d2 = _sq_dists(x, x[chosen]).min(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(x.shape[0], p=d2 / total))
        else:  # every point coincides with a seed already
            nxt = int(rng.choice(np.setdiff1d(np.arange(x.shape[0]), chosen)))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]])[:, 0])
    return chosen


MAX_SEED_DRAWS = 2000


def _lloyd(x, centroids, max_iter, tol, history=None):
    n, k = x.shape[0], centroids.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        labels = np.argmin(_sq_dists(x, centroids), axis=1)
        if history is not None:
            history.append(inertia(x, centroids, labels))
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = x[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # reseed each empty cluster at the point farthest from its current centroid
            d2 = _sq_dists(x, np.where(counts[:, None] > 0, new, centroids))[np.arange(n), labels]
            for j in empty:
                far = int(np.argmax(d2))
                new[j] = x[far]
                d2[far] = -1.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if empty.size == 0 and shift < tol:
            break
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    if history is not None:
        history.append(inertia(x, centroids, labels))
    return centroids, labels, it


def kmeans(x, k: int, max_iter: int = 300, tol: float = 1e-6, seed: int = 0, n_init: int = 10,
           history: list | None = None) -> ClusterModel:
    """Best of ``n_init`` Lloyd runs from distinct k-means++ seed sets, ranked by inertia.

    The first run wins ties. Small inputs with fewer than ``n_init`` distinct
    seed sets stop once every set has been tried.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points n={n}")
    rng = np.random.default_rng(seed)
    best = None
    tried: set[tuple[int, ...]] = set()
    for run in range(n_init):
        # a seed set that was already tried would replay the same Lloyd run; redraw instead
        for _ in range(MAX_SEED_DRAWS):
            idx = _kmeanspp_indices(x, k, rng)
            key = tuple(sorted(idx))
            if key not in tried:
                break
        else:
            break  # every reachable seed set has been tried
        tried.add(key)
        trace = [] if history is not None else None
        start = x[idx].copy()
        centroids, labels, n_iter = _lloyd(x, start, max_iter, tol, trace)
        score = inertia(x, centroids, labels)
        if best is None or score < best.inertia:
            best = ClusterModel(k, centroids, labels, score, n_iter, seed, n_init)
        if history is not None:
            history.append(trace)
    return best


def elbow_curve(x, k_max: int = 10, **kwargs) -> list[tuple[int, float]]:
    k_max = min(k_max, len(x))
    return [(k, kmeans(x, k, **kwargs).inertia) for k in range(1, k_max + 1)]


def elbow_select(curve: Sequence[tuple[int, float]]) -> int:
    """The k whose (k, inertia) point lies farthest from the first-to-last chord; ties go to the smaller k."""
    if len(curve) < 3:
        raise ValueError("elbow selection needs at least 3 curve points")
    ks = np.array([c[0] for c in curve], dtype=np.float64)
    ys = np.array([c[1] for c in curve], dtype=np.float64)
    dx, dy = ks[-1] - ks[0], ys[-1] - ys[0]
    dist = np.abs(dy * (ks - ks[0]) - dx * (ys - ys[0])) / np.hypot(dx, dy)
    interior = dist[1:-1]
    return int(ks[1 + int(np.argmax(interior))])


def adjusted_rand_index(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)

    def pairs(v):
        return (v * (v - 1) / 2.0).sum()

    index = pairs(table)
    rows, cols = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = len(a) * (len(a) - 1) / 2.0
    expected = rows * cols / total if total else 0.0
    top = 0.5 * (rows + cols)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))
