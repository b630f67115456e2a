"""Cascade of horizon-specialised transformers with averaged decoder inputs.

Stage ``j`` (1-based) reads the 7 observed days plus ``j - 1`` forecast days
and emits one value per decoder position, i.e. days t+1 .. t+6+j. Its last
``j`` outputs are its forecasts for offsets 1..j (days t+7 .. t+6+j). The
decoder row for offset ``m`` given to stage ``j`` carries the mean of the
offset-``m`` forecasts of stages ``m .. j-1``; the published forecast for
offset ``k`` is the mean over every stage ``k .. n_models``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureTransforms
from .training import LossHistory, TrainConfig, train_loop
from .transformer import ModelConfig, Seq2SeqTransformer
from .windows import ENCODER_LEN, HORIZON, WEEK_LEN, WindowBatch

log = logging.getLogger(__name__)


class CascadeError(RuntimeError):
    pass


@dataclass(frozen=True)
class JitEnsembleConfig:
    n_models: int = 7
    encoder_len: int = ENCODER_LEN
    base_decoder_len: int = WEEK_LEN
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not 1 <= self.n_models <= HORIZON:
            raise ValueError(f"n_models must be in 1..{HORIZON}")
        if self.encoder_len != ENCODER_LEN or self.base_decoder_len != WEEK_LEN:
            raise ValueError("the window layout is fixed at a 30-day encoder and 7-day base decoder")

    def decoder_len(self, stage: int) -> int:
        return self.base_decoder_len + stage - 1


class CascadeState:
    """Per-stage forecasts keyed by (stage, offset); values are arrays over windows."""

    def __init__(self):
        self.preds: dict[tuple[int, int], np.ndarray] = {}

    def record(self, stage: int, offset: int, values) -> None:
        if not 1 <= offset <= stage:
            raise CascadeError(f"stage {stage} cannot forecast offset {offset}")
        self.preds[(stage, offset)] = np.asarray(values, dtype=np.float64)

    def stages(self) -> list[int]:
        return sorted({s for s, _ in self.preds})

    def history(self, offset: int) -> list[np.ndarray]:
        return [self.preds[(s, o)] for s, o in sorted(self.preds) if o == offset]


def average_predictions(state: CascadeState, stage: int, offset: int):
    """Mean of the offset-``offset`` forecasts of stages ``offset .. stage-1`` (``stage - offset`` terms)."""
    if not 1 <= offset < stage:
        raise CascadeError(f"no averaged input for offset {offset} at stage {stage}")
    terms = []
    for i in range(offset, stage):
        if (i, offset) not in state.preds:
            raise CascadeError(f"missing forecast of stage {i} for offset {offset}")
        terms.append(state.preds[(i, offset)])
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / len(terms)


def decoder_input_for(stage: int, week: np.ndarray, state: CascadeState,
                      future_dow: np.ndarray, future_month: np.ndarray,
                      transforms: FeatureTransforms) -> np.ndarray:
    """Decoder rows for ``stage``: the observed week followed by ``stage - 1`` averaged forecast rows.

    ``week`` is ``(N, 7, F)``; ``future_dow``/``future_month`` are ``(N, >=stage-1)``
    calendar fields of days t+7, t+8, ...
    """
    if stage == 1:
        return week.copy()
    extra = []
    for m in range(1, stage):
        value = np.asarray(average_predictions(state, stage, m))
        kwh = transforms.sma7.inverse(value)
        extra.append(transforms.rows(kwh, future_dow[:, m - 1], future_month[:, m - 1]))
    return np.concatenate([week, np.stack(extra, axis=1)], axis=1)


@dataclass
class ForecastResult:
    stage_outputs: dict[int, np.ndarray]  # stage -> (N, 6 + stage) raw outputs
    state: CascadeState
    forecast: np.ndarray  # (N, n_models), scaled units
    forecast_kwh: np.ndarray

    def prediction_log(self, window_ids=None) -> list[tuple[int, int, int, float]]:
        """Rows ``(window_id, stage, offset, value)`` of every retained stage forecast."""
        n = self.forecast.shape[0]
        ids = list(range(n)) if window_ids is None else list(window_ids)
        rows = []
        for w in range(n):
            for stage, offset in sorted(self.state.preds):
                rows.append((ids[w], stage, offset, float(self.state.preds[(stage, offset)][w])))
        return rows

    def prediction_log_csv(self, window_ids=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["window_id", "stage", "offset", "value"])
        for wid, stage, offset, value in self.prediction_log(window_ids):
            writer.writerow([wid, stage, offset, repr(value)])
        return buf.getvalue()


def read_prediction_log(text: str) -> dict[tuple[int, int, int], float]:
    reader = csv.DictReader(io.StringIO(text))
    return {(int(r["window_id"]), int(r["stage"]), int(r["offset"])): float(r["value"]) for r in reader}


class JitEnsemble:
    """Ordered stages; stage ``i`` has its own independently initialised weights."""

    def __init__(self, config: JitEnsembleConfig, models: list[Seq2SeqTransformer], seed: int = 0):
        if len(models) != config.n_models:
            raise ValueError("one model per stage is required")
        self.config = config
        self.models = models
        self.seed = seed
        self.trained_stages = 0
        self.loss_history: dict[int, LossHistory] = {}
        self.input_log: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.models)

    def stage(self, j: int) -> Seq2SeqTransformer:
        return self.models[j - 1]

    def run_stage(self, j: int, encoder: np.ndarray, dec_in: np.ndarray) -> np.ndarray:
        out = self.stage(j).predict(encoder, dec_in)
        if not np.all(np.isfinite(out)):
            raise CascadeError(f"stage {j} produced non-finite output")
        return out


def stage_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def build_ensemble(config: JitEnsembleConfig = JitEnsembleConfig(), seed: int = 0) -> JitEnsemble:
    models = [Seq2SeqTransformer(config.model, seed=s) for s in stage_seeds(seed, config.n_models)]
    return JitEnsemble(config, models, seed)


def cascade_predict(ensemble: JitEnsemble, encoder: np.ndarray, week: np.ndarray,
                    future_dow: np.ndarray, future_month: np.ndarray,
                    transforms: FeatureTransforms, upto: int | None = None) -> ForecastResult:
    """Run stages 1..``upto`` (default all) on a batch of windows."""
    encoder, week = np.asarray(encoder), np.asarray(week)
    if encoder.ndim == 2:
        encoder, week = encoder[None], week[None]
        future_dow, future_month = np.atleast_2d(future_dow), np.atleast_2d(future_month)
    n_stages = ensemble.config.n_models if upto is None else upto
    state = CascadeState()
    outputs = {}
    for j in range(1, n_stages + 1):
        dec_in = decoder_input_for(j, week, state, future_dow, future_month, transforms)
        out = ensemble.run_stage(j, encoder, dec_in)
        outputs[j] = out
        for k in range(1, j + 1):
            state.record(j, k, out[:, WEEK_LEN - 2 + k])
    final = np.stack([average_predictions(state, n_stages + 1, k) for k in range(1, n_stages + 1)], axis=1)
    return ForecastResult(outputs, state, final, transforms.sma7.inverse(final))


def train_cascade(ensemble: JitEnsemble, train: WindowBatch, val: WindowBatch | None,
                  transforms: FeatureTransforms, config: TrainConfig,
                  stages: list[int] | None = None) -> dict[int, LossHistory]:
    """Train stages strictly in order; stage ``j`` sees decoder inputs built from frozen stages < ``j``."""
    todo = stages or list(range(ensemble.trained_stages + 1, ensemble.config.n_models + 1))
    for j in todo:
        train_stage(ensemble, j, train, val, transforms, config)
    return ensemble.loss_history


def train_stage(ensemble: JitEnsemble, j: int, train: WindowBatch, val: WindowBatch | None,
                transforms: FeatureTransforms, config: TrainConfig) -> LossHistory:
    if j != ensemble.trained_stages + 1:
        raise CascadeError(f"stage {j} cannot be trained before stage {ensemble.trained_stages + 1}")

    def inputs(batch: WindowBatch):
        prior = cascade_predict(ensemble, batch.encoder, batch.week, batch.future_dow,
                                batch.future_month, transforms, upto=j - 1) if j > 1 else None
        state = prior.state if prior is not None else CascadeState()
        dec = decoder_input_for(j, batch.week, state, batch.future_dow, batch.future_month, transforms)
        return batch.encoder, dec, batch.targets[:, :WEEK_LEN - 1 + j]

    enc, dec, target = inputs(train)
    ensemble.input_log[j] = dec
    val_arrays = inputs(val) if val is not None else None
    seed = stage_seeds(config.seed + 7919 * ensemble.seed, ensemble.config.n_models)[j - 1]
    hist = train_loop(ensemble.stage(j), enc, dec, target, val_arrays, config, seed=seed)
    ensemble.loss_history[j] = hist
    ensemble.trained_stages = j
    log.info("stage %d trained: train mse %.3g -> %.3g", j, hist.train[0], hist.train[-1])
    return hist
