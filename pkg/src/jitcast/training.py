"""MSE loss and the mini-batch Adam training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Adam, Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if min(self.fractions) <= 0 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be positive and sum to 1")


@dataclass
class LossHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0


def mse_loss(pred, target) -> Tensor:
    pred = ag._lift(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return ag.mean(ag.square(pred - target))


def train_loop(model, enc: np.ndarray, dec: np.ndarray, target: np.ndarray,
               val: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
               config: TrainConfig, seed: int | None = None) -> LossHistory:
    """Fit ``model`` (anything with ``forward``/``parameters``/``weights``) by MSE and Adam.

    The training windows are reshuffled each epoch from a seeded generator. The
    recorded train loss of an epoch is the sample-weighted mean of its batch losses. When
    validation data is given the weights of the best validation epoch are restored.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = model.parameters()
    opt = Adam(params, lr=config.learning_rate)
    hist = LossHistory()
    n = len(target)
    best = (np.inf, None)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        running = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            opt.zero_grad()
            loss = mse_loss(model.forward(enc[idx], dec[idx]), target[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            ag.backward(loss)
            opt.step()
            hist.steps += 1
            running += float(loss.data) * len(idx)
        hist.train.append(running / n)
        if val is not None:
            v = evaluate_mse(model, *val)
            hist.val.append(v)
            if v < best[0]:
                best = (v, model.weights.arrays())
                hist.best_epoch = epoch
    if best[1] is not None:
        model.weights.load_arrays(best[1])
    log.debug("trained %d epochs, final train mse %.3g", config.epochs, hist.train[-1])
    return hist


def evaluate_mse(model, enc, dec, target, chunk: int = 256) -> float:
    total = 0.0
    for lo in range(0, len(target), chunk):
        pred = model.predict(enc[lo:lo + chunk], dec[lo:lo + chunk])
        total += float(((pred - target[lo:lo + chunk]) ** 2).sum())
    return total / target.size
