"""
Adversarial training with label smoothing and the variety loss.

Each batch takes one discriminator step and then one generator step. All
randomness of epoch e comes from generators seeded with (seed, stream, e), so a
run resumed from an epoch checkpoint continues exactly like an uninterrupted one.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from evaluation.metrics import displacement_errors
from neural.layers import Params
from neural.losses import bce_with_logits, squared_error
from neural.optim import AdamState, adam_update
from sceneintent.constants import STREAM_LABELS, STREAM_NOISE, STREAM_SHUFFLE, STREAM_VALIDATION
from sceneintent.decorators import log_execution_time
from sceneintent.exceptions import (
    ConfigurationError,
    DataError,
    InsufficientDataError,
    NonFiniteGradientError,
    TrainingDivergedError,
)
from sceneintent.utils import make_rng
from trajectories.windows import DatasetSplit, TrainInstance

from .gan import DISCRIMINATOR, GENERATOR, GanArchitecture, GanModel, discriminator_forward, generator_forward

logger = logging.getLogger(__name__)

# Generator rows per call when scoring the validation split.
_VALIDATION_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    k_variety: int = 20
    lr_generator: float = 1e-3
    lr_discriminator: float = 1e-3
    real_label_range: Tuple[float, float] = (0.7, 1.0)
    fake_label_range: Tuple[float, float] = (0.0, 0.3)
    variety_weight: float = 1.0
    validation_k: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'real_label_range', tuple(float(v) for v in self.real_label_range))
        object.__setattr__(self, 'fake_label_range', tuple(float(v) for v in self.fake_label_range))
        if self.k_variety < 1 or self.validation_k < 1:
            raise ConfigurationError('k_variety and validation_k must be at least 1.')
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ConfigurationError('Learning rates must be positive.')
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError('epochs must be >= 0 and batch_size >= 1.')
        for name in ('real_label_range', 'fake_label_range'):
            low, high = getattr(self, name)
            if not 0.0 <= low <= high <= 1.0:
                raise ConfigurationError(f'{name} must satisfy 0 <= low <= high <= 1.')

    @classmethod
    def from_settings(cls, overrides: Optional[Mapping[str, Any]] = None) -> 'TrainConfig':
        config = dict(settings.TRAINING)
        config.update(overrides or {})
        return cls(**config)

    def as_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['real_label_range'] = list(self.real_label_range)
        data['fake_label_range'] = list(self.fake_label_range)
        return data


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    d_loss: float
    g_loss: float
    val_min_k_ade: float

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TrainingState:
    """
    Everything needed to continue training after ``epoch`` completed epochs.
    """
    model: GanModel
    adam_generator: AdamState
    adam_discriminator: AdamState
    epoch: int = 0
    history: Tuple[EpochMetrics, ...] = field(default_factory=tuple)

    @classmethod
    def start(cls, model: GanModel, cfg: TrainConfig) -> 'TrainingState':
        return cls(
            model=model,
            adam_generator=AdamState.create(model.subset(GENERATOR), learning_rate=cfg.lr_generator),
            adam_discriminator=AdamState.create(model.subset(DISCRIMINATOR), learning_rate=cfg.lr_discriminator),
        )


def smoothed_labels(rng: np.random.Generator, n: int, low: float, high: float) -> np.ndarray:
    """
    ``n`` soft labels drawn uniformly from [low, high], shaped (n, 1).
    """
    return rng.uniform(low, high, size=(n, 1))


def stack_instances(instances: Sequence[TrainInstance]) -> Tuple[np.ndarray, np.ndarray]:
    past = np.stack([instance.past.displacements for instance in instances])
    future = np.stack([instance.future.displacements for instance in instances])
    return past, future


def _subset(params: Params, prefix: str) -> Params:
    return {name: value for name, value in params.items() if name.startswith(prefix)}


def discriminator_loss(
    params: Params,
    arch: GanArchitecture,
    past: np.ndarray,
    future: np.ndarray,
    noise: np.ndarray,
    real_labels: np.ndarray,
    fake_labels: np.ndarray,
) -> Tuple[float, Params]:
    """
    BCE(D(real), real labels) + BCE(D(G(z)), fake labels) and its ``disc.`` gradients.
    Generated futures are treated as constants.
    """
    fake, _ = generator_forward(params, arch, past, noise)
    real_logits, real_backward = discriminator_forward(params, arch, past, future)
    fake_logits, fake_backward = discriminator_forward(params, arch, past, fake)
    real_loss, d_real = bce_with_logits(real_logits, real_labels)
    fake_loss, d_fake = bce_with_logits(fake_logits, fake_labels)
    grads, _ = real_backward(d_real)
    fake_grads, _ = fake_backward(d_fake)
    for name, value in fake_grads.items():
        grads[name] = grads[name] + value
    return real_loss + fake_loss, grads


def generator_loss(
    params: Params,
    arch: GanArchitecture,
    past: np.ndarray,
    future: np.ndarray,
    noise: np.ndarray,
    variety_weight: float = 1.0,
    adversarial_label: float = 1.0,
) -> Tuple[float, Params]:
    """
    BCE(D(G(z_0)), 1) + weight * mean over the batch of the smallest summed
    squared error among the k samples, and its ``gen.`` gradients.

    ``noise`` is (B, k, noise_dim); sample 0 of each instance feeds the adversarial term.
    """
    batch, k = noise.shape[:2]
    rows = np.arange(batch)
    fake, generator_backward = generator_forward(
        params, arch, np.repeat(past, k, axis=0), noise.reshape(batch * k, -1)
    )
    fake = fake.reshape(batch, k, arch.pred_len, 2)
    errors, d_errors = squared_error(fake, future[:, None])
    best = np.argmin(errors, axis=1)
    variety = float(errors[rows, best].mean())

    logits, discriminator_backward = discriminator_forward(params, arch, past, fake[:, 0])
    adversarial, d_logits = bce_with_logits(logits, adversarial_label)
    _, d_first = discriminator_backward(d_logits)

    d_fake = np.zeros_like(fake)
    d_fake[rows, best] += variety_weight * d_errors[rows, best] / batch
    d_fake[:, 0] += d_first
    grads = generator_backward(d_fake.reshape(batch * k, arch.pred_len, 2))
    return adversarial + variety_weight * variety, grads


def validation_min_k_ade(model: GanModel, instances: Sequence[TrainInstance], k: int, seed: int) -> float:
    """
    Mean over instances of the best-of-k ADE, with one fixed noise set shared by all instances.
    """
    arch = model.architecture
    noise = make_rng(seed, STREAM_VALIDATION).standard_normal((k, arch.noise_dim))
    past_all, future_all = stack_instances(instances)
    best: List[np.ndarray] = []
    per_chunk = max(1, _VALIDATION_CHUNK // k)
    for begin in range(0, len(past_all), per_chunk):
        past = past_all[begin:begin + per_chunk]
        truth = np.cumsum(future_all[begin:begin + per_chunk], axis=1)
        steps, _ = generator_forward(
            model.params, arch, np.repeat(past, k, axis=0), np.tile(noise, (len(past), 1))
        )
        positions = np.cumsum(steps.reshape(len(past), k, arch.pred_len, 2), axis=2)
        ade_values, _ = displacement_errors(positions, truth[:, None])
        best.append(ade_values.min(axis=1))
    return float(np.concatenate(best).mean())


def _diverged(detail: str, state: TrainingState, epoch: int) -> TrainingDivergedError:
    logger.error(f"Training diverged in epoch {epoch + 1}: {detail}")
    return TrainingDivergedError(
        f'{detail} (epoch {epoch + 1}); last good checkpoint is epoch {state.epoch}.',
        last_good=state,
        epoch=state.epoch,
    )


@log_execution_time
def train(
    model: GanModel,
    split: DatasetSplit,
    cfg: TrainConfig,
    state: Optional[TrainingState] = None,
    on_epoch: Optional[Callable[[TrainingState], None]] = None,
) -> TrainingState:
    """
    Train up to ``cfg.epochs`` completed epochs, continuing from ``state`` when given.

    ``on_epoch`` is called with the state after every epoch (used for checkpointing).
    """
    if not split.train:
        raise InsufficientDataError('Training split is empty.')
    state = state or TrainingState.start(model, cfg)
    arch = state.model.architecture
    validation = split.val or split.train
    past_all, future_all = stack_instances(split.train)
    count = len(past_all)

    for epoch in range(state.epoch, cfg.epochs):
        order = make_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(count)
        label_rng = make_rng(cfg.seed, STREAM_LABELS, epoch)
        noise_rng = make_rng(cfg.seed, STREAM_NOISE, epoch)
        params = dict(state.model.params)
        adam_g, adam_d = state.adam_generator, state.adam_discriminator
        d_losses: List[float] = []
        g_losses: List[float] = []
        for begin in range(0, count, cfg.batch_size):
            index = order[begin:begin + cfg.batch_size]
            past, future = past_all[index], future_all[index]
            size = len(index)
            real_labels = smoothed_labels(label_rng, size, *cfg.real_label_range)
            fake_labels = smoothed_labels(label_rng, size, *cfg.fake_label_range)
            try:
                d_loss, d_grads = discriminator_loss(
                    params, arch, past, future,
                    noise_rng.standard_normal((size, arch.noise_dim)), real_labels, fake_labels,
                )
                if not math.isfinite(d_loss):
                    raise _diverged('discriminator loss is not finite', state, epoch)
                updated, adam_d = adam_update(adam_d, _subset(params, DISCRIMINATOR), d_grads)
                params.update(updated)

                g_loss, g_grads = generator_loss(
                    params, arch, past, future,
                    noise_rng.standard_normal((size, cfg.k_variety, arch.noise_dim)),
                    cfg.variety_weight,
                )
                if not math.isfinite(g_loss):
                    raise _diverged('generator loss is not finite', state, epoch)
                updated, adam_g = adam_update(adam_g, _subset(params, GENERATOR), g_grads)
                params.update(updated)
            except NonFiniteGradientError as e:
                raise _diverged(e.detail, state, epoch) from e
            d_losses.append(d_loss)
            g_losses.append(g_loss)

        try:
            trained = state.model.with_params(params)
        except DataError as e:
            raise _diverged(e.detail, state, epoch) from e
        metrics = EpochMetrics(
            epoch=epoch + 1,
            d_loss=float(np.mean(d_losses)),
            g_loss=float(np.mean(g_losses)),
            val_min_k_ade=validation_min_k_ade(trained, validation, cfg.validation_k, cfg.seed),
        )
        state = TrainingState(trained, adam_g, adam_d, epoch + 1, state.history + (metrics,))
        logger.info(
            f"Epoch {metrics.epoch}/{cfg.epochs}: d_loss={metrics.d_loss:.4f} "
            f"g_loss={metrics.g_loss:.4f} val_min{cfg.validation_k}_ade={metrics.val_min_k_ade:.4f}"
        )
        if on_epoch is not None:
            on_epoch(state)
    return state
