"""Minibatch training with early stopping and track-level prediction averaging."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from .dataset import SegmentConfig, make_inference_segments, make_training_segments, track_clip, track_tokens
from .errors import DivergenceError, EmptyDataError, NonFiniteError
from .layers import ModelGraph
from .models import Mode, PredictionRow, PredictionSet, SegmentSample, TrackRecord
from .tensor import Parameter, Tape, Tensor, backward, mse_loss
from .text_embed import EmbeddingMatrix, Vocabulary

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimizer and stopping settings for one training run."""
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    mode: str = "audio"
    variant: str = "convnet"

    def __post_init__(self):
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be a finite non-negative number, got {self.learning_rate}")
        for name in ("batch_size", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience > self.epochs:
            raise ValueError(f"patience ({self.patience}) cannot exceed epochs ({self.epochs})")
        Mode(self.mode)

    @classmethod
    def from_settings(cls, settings: Mapping, mode: str, variant: str) -> "TrainConfig":
        epochs = int(settings.get('epochs', 100))
        return cls(learning_rate=float(settings.get('learning_rate', 1e-3)),
                   batch_size=int(settings.get('batch_size', 32)),
                   epochs=epochs,
                   patience=min(int(settings.get('patience', 10)), epochs),
                   seed=int(settings.get('seed', 0)),
                   mode=mode, variant=variant)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive moment estimation over a fixed parameter list."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self) -> None:
        self.t += 1
        if self.lr == 0.0:
            return
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class HistoryRow(NamedTuple):
    epoch: int
    train_loss: float
    valid_loss: float


class TrainResult(NamedTuple):
    model: ModelGraph
    history: list[HistoryRow]
    best_epoch: int
    best_valid_loss: float


def stack_segments(samples: Sequence[SegmentSample], modalities: Sequence[str]) -> tuple[dict, np.ndarray]:
    """Batch arrays per modality and the [B, 2] target matrix."""
    inputs = {}
    for name in modalities:
        arrays = [s.inputs().get(name) for s in samples]
        if any(a is None for a in arrays):
            raise EmptyDataError(f"Some segments have no {name} input")
        inputs[name] = np.stack(arrays)
    targets = np.array([s.label.as_array() for s in samples]).reshape(len(samples), 2)
    return inputs, targets


def segment_loss(model: ModelGraph, segments: Sequence[SegmentSample], batch_size: int = 32) -> float:
    """Mean per-segment loss in inference mode."""
    total = 0.0
    for start in range(0, len(segments), batch_size):
        batch = segments[start:start + batch_size]
        inputs, targets = stack_segments(batch, model.modalities)
        tape = Tape(training=False)
        total += mse_loss(model.forward(inputs, tape), Tensor(targets)).item() * len(batch)
    return total / max(len(segments), 1)


def train(model: ModelGraph, segments: Sequence[SegmentSample], valid: Sequence[SegmentSample],
          cfg: TrainConfig) -> TrainResult:
    """Adam on the summed squared error of both outputs; restores the best-validation weights."""
    if not segments:
        raise EmptyDataError("No training segments")
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), cfg.learning_rate)
    history: list[HistoryRow] = []
    best_loss, best_epoch, best_state = math.inf, 0, model.state_dict()
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(segments))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [segments[k] for k in order[start:start + cfg.batch_size]]
            inputs, targets = stack_segments(batch, model.modalities)
            tape = Tape(training=True)
            try:
                loss = mse_loss(model.forward(inputs, tape, rng), Tensor(targets))
            except NonFiniteError as e:
                raise DivergenceError(epoch, math.nan) from e
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, value)
            backward(loss)
            optimizer.step()
            running += value * len(batch)
        train_loss = running / len(segments)
        valid_loss = segment_loss(model, valid, cfg.batch_size) if valid else train_loss
        if not math.isfinite(valid_loss):
            raise DivergenceError(epoch, valid_loss)
        history.append(HistoryRow(epoch, train_loss, valid_loss))
        logger.info("epoch %d/%d: train_loss %.5f valid_loss %.5f", epoch, cfg.epochs, train_loss, valid_loss)

        if valid_loss < best_loss:
            best_loss, best_epoch, best_state = valid_loss, epoch, model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("Early stop after epoch %d; best epoch %d", epoch, best_epoch)
                break

    model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, best_loss)


# =============================================================================
# Track-level inference
# =============================================================================

def build_training_set(records: Sequence[TrackRecord], mode: Union[Mode, str], seed: int,
                       vocab: Optional[Vocabulary] = None, emb: Optional[EmbeddingMatrix] = None,
                       config: Optional[SegmentConfig] = None, base_dir: Optional[Path] = None,
                       threads: int = 1, augment: bool = True) -> list[SegmentSample]:
    """Training segments of every record (or inference-style segments with ``augment=False``)."""
    mode = Mode(mode)
    config = config or SegmentConfig()

    def one(record: TrackRecord) -> list[SegmentSample]:
        clip = track_clip(record, base_dir) if mode is not Mode.LYRICS else None
        tokens = track_tokens(record, base_dir) if mode is not Mode.AUDIO else None
        if augment:
            return make_training_segments(record, mode, seed, clip, tokens, vocab, emb, config)
        return make_inference_segments(record, mode, clip, tokens, vocab, emb, config)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_track = list(pool.map(one, records))
    return [s for segments in per_track for s in segments]


def predict_track(model: ModelGraph, record: TrackRecord, mode: Union[Mode, str], clip=None,
                  tokens: Optional[list[str]] = None, vocab: Optional[Vocabulary] = None,
                  emb: Optional[EmbeddingMatrix] = None,
                  config: Optional[SegmentConfig] = None) -> tuple[float, float]:
    """Mean model output over evenly spaced, unaugmented segments."""
    segments = make_inference_segments(record, mode, clip, tokens, vocab, emb, config)
    inputs, _ = stack_segments(segments, model.modalities)
    outputs = np.asarray(model.predict(inputs))
    valence, arousal = outputs.mean(axis=0)
    return float(valence), float(arousal)


def predict_tracks(model: ModelGraph, records: Sequence[TrackRecord], mode: Union[Mode, str], split: str,
                   vocab: Optional[Vocabulary] = None, emb: Optional[EmbeddingMatrix] = None,
                   config: Optional[SegmentConfig] = None, base_dir: Optional[Path] = None,
                   threads: int = 1, name: str = "") -> PredictionSet:
    mode = Mode(mode)

    def one(record: TrackRecord) -> PredictionRow:
        clip = track_clip(record, base_dir) if mode is not Mode.LYRICS else None
        tokens = track_tokens(record, base_dir) if mode is not Mode.AUDIO else None
        valence, arousal = predict_track(model, record, mode, clip, tokens, vocab, emb, config)
        return PredictionRow(record.msd_id, split, valence, arousal, record.label.valence, record.label.arousal)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(one, records))
    return PredictionSet(rows, name=name)
