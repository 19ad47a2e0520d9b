"""
Conditional sequence GAN over agent-frame displacements.

Generator: embedding -> LSTM encoder over the M past steps -> linear map of
[encoder state; noise] to the decoder's initial hidden state -> LSTM decoder
whose input at each step is the embedding of the previous displacement (the
last observed one first) -> linear head emitting the next displacement.

Discriminator: its own embedding -> LSTM over the M + N displacements -> linear
score of the final hidden state -> sigmoid.
"""
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
from django.conf import settings

from neural.layers import (
    LstmCellParams,
    Params,
    init_linear,
    init_lstm,
    linear_backward,
    linear_forward,
    lstm_step_cached,
    lstm_step_backward,
    sigmoid,
)
from neural.losses import squared_error
from sceneintent.constants import NOISE_DIM, OBS_LEN, PRED_LEN
from sceneintent.exceptions import ConfigurationError, DataError, ShapeMismatchError
from sceneintent.utils import make_rng
from trajectories.core import RelativeTrajectory

logger = logging.getLogger(__name__)

GENERATOR = 'gen.'
DISCRIMINATOR = 'disc.'


@dataclass(frozen=True)
class GanArchitecture:
    embed_dim: int = 16
    encoder_hidden: int = 32
    decoder_hidden: int = 40
    discriminator_hidden: int = 32
    noise_dim: int = NOISE_DIM
    obs_len: int = OBS_LEN
    pred_len: int = PRED_LEN

    def __post_init__(self):
        if self.noise_dim != NOISE_DIM:
            raise ConfigurationError(f'noise_dim must be {NOISE_DIM}, got {self.noise_dim}.')
        if self.obs_len != OBS_LEN or self.pred_len != PRED_LEN:
            raise ConfigurationError(
                f'obs_len and pred_len must be {OBS_LEN} and {PRED_LEN}, '
                f'got {self.obs_len} and {self.pred_len}.'
            )
        for name in ('embed_dim', 'encoder_hidden', 'decoder_hidden', 'discriminator_hidden'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'{name} must be at least 1.')

    @classmethod
    def from_settings(cls, overrides: Optional[Mapping[str, Any]] = None) -> 'GanArchitecture':
        config = dict(settings.GAN_ARCHITECTURE)
        config.update(overrides or {})
        return cls(**config)

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return dict(_parameter_shapes(self))


def _init_params(params: Params, arch: GanArchitecture, rng: np.random.Generator) -> None:
    init_linear(params, rng, 'gen.embed', 2, arch.embed_dim)
    init_lstm(params, rng, 'gen.encoder', arch.embed_dim, arch.encoder_hidden)
    init_linear(params, rng, 'gen.hidden_init', arch.encoder_hidden + arch.noise_dim, arch.decoder_hidden)
    init_lstm(params, rng, 'gen.decoder', arch.embed_dim, arch.decoder_hidden)
    init_linear(params, rng, 'gen.head', arch.decoder_hidden, 2)
    init_linear(params, rng, 'disc.embed', 2, arch.embed_dim)
    init_lstm(params, rng, 'disc.lstm', arch.embed_dim, arch.discriminator_hidden)
    init_linear(params, rng, 'disc.head', arch.discriminator_hidden, 1)


@lru_cache(maxsize=None)
def _parameter_shapes(arch: GanArchitecture) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
    params: Params = {}
    _init_params(params, arch, np.random.default_rng(0))
    return tuple((name, params[name].shape) for name in sorted(params))


def _readonly(params: Mapping[str, np.ndarray]) -> Params:
    frozen: Params = {}
    for name in sorted(params):
        array = np.array(params[name], dtype=np.float64, copy=True)
        array.setflags(write=False)
        frozen[name] = array
    return frozen


@dataclass(frozen=True)
class GanModel:
    """
    Immutable parameter set of generator G and discriminator D.
    """
    architecture: GanArchitecture
    params: Params = field(repr=False)

    def __post_init__(self):
        expected = self.architecture.parameter_shapes()
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise DataError(f'Model parameters do not match the architecture (missing {missing}, extra {extra}).')
        for name, shape in expected.items():
            if np.shape(self.params[name]) != shape:
                raise ShapeMismatchError(
                    f'{name} has shape {np.shape(self.params[name])}, expected {shape}.'
                )
            if not np.all(np.isfinite(self.params[name])):
                raise DataError(f'{name} contains non-finite values.', code='non_finite')
        object.__setattr__(self, 'params', _readonly(self.params))

    @classmethod
    def initialize(cls, architecture: GanArchitecture, seed: int) -> 'GanModel':
        params: Params = {}
        _init_params(params, architecture, make_rng(seed))
        return cls(architecture, params)

    def with_params(self, params: Mapping[str, np.ndarray]) -> 'GanModel':
        return GanModel(self.architecture, dict(params))

    def subset(self, prefix: str) -> Params:
        return {name: value for name, value in self.params.items() if name.startswith(prefix)}

    def generate_batch(self, past: RelativeTrajectory, noise: np.ndarray) -> np.ndarray:
        """
        One future per noise row for a single past: (n, noise_dim) -> (n, N, 2).
        """
        noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
        steps = _past_array(past)
        batch = np.broadcast_to(steps, (len(noise),) + steps.shape)
        return generator_forward(self.params, self.architecture, batch, noise)[0]


def _past_array(past: RelativeTrajectory) -> np.ndarray:
    if len(past) != OBS_LEN:
        raise DataError(f'Past must have {OBS_LEN} displacements, got {len(past)}.', code='wrong_past_length')
    return past.displacements


def _check_noise(noise: np.ndarray, arch: GanArchitecture) -> None:
    if noise.shape[-1] != arch.noise_dim:
        raise ShapeMismatchError(f'noise has {noise.shape[-1]} entries, expected {arch.noise_dim}.')
    if not np.all(np.isfinite(noise)):
        raise DataError('Noise contains non-finite values.', code='non_finite')


def generator_forward(
    params: Params, arch: GanArchitecture, past: np.ndarray, noise: np.ndarray
) -> Tuple[np.ndarray, Callable[[np.ndarray], Params]]:
    """
    Batched generator. ``past`` is (B, M, 2), ``noise`` is (B, noise_dim).
    Returns the (B, N, 2) futures and a backward function mapping d_future to
    gradients of the ``gen.`` parameters.
    """
    _check_noise(noise, arch)
    if past.ndim != 3 or past.shape[1:] != (arch.obs_len, 2) or len(past) != len(noise):
        raise ShapeMismatchError(f'past batch has shape {past.shape}, noise {noise.shape}.')
    batch = len(past)
    encoder = LstmCellParams.view(params, 'gen.encoder')
    decoder = LstmCellParams.view(params, 'gen.decoder')

    h = np.zeros((batch, arch.encoder_hidden))
    c = np.zeros_like(h)
    encoder_caches = []
    for t in range(arch.obs_len):
        e = linear_forward(params, 'gen.embed', past[:, t])
        h, c, cache = lstm_step_cached(encoder, e, h, c)
        encoder_caches.append(cache)

    hidden_input = np.concatenate([h, noise], axis=1)
    h = linear_forward(params, 'gen.hidden_init', hidden_input)
    c = np.zeros_like(h)
    prev = past[:, -1]
    decoder_inputs, decoder_caches, decoder_hidden, outputs = [], [], [], []
    for _ in range(arch.pred_len):
        decoder_inputs.append(prev)
        e = linear_forward(params, 'gen.embed', prev)
        h, c, cache = lstm_step_cached(decoder, e, h, c)
        decoder_caches.append(cache)
        decoder_hidden.append(h)
        prev = linear_forward(params, 'gen.head', h)
        outputs.append(prev)
    future = np.stack(outputs, axis=1)

    def backward(d_future: np.ndarray) -> Params:
        grads: Params = {}
        dh = np.zeros((batch, arch.decoder_hidden))
        dc = np.zeros_like(dh)
        d_next_input = np.zeros((batch, 2))
        for t in reversed(range(arch.pred_len)):
            d_out = d_future[:, t] + d_next_input
            dh = dh + linear_backward(params, 'gen.head', decoder_hidden[t], d_out, grads)
            dx, dh, dc = lstm_step_backward(decoder, decoder_caches[t], dh, dc, grads, 'gen.decoder')
            d_next_input = linear_backward(params, 'gen.embed', decoder_inputs[t], dx, grads)
        d_hidden_input = linear_backward(params, 'gen.hidden_init', hidden_input, dh, grads)
        dh = d_hidden_input[:, :arch.encoder_hidden]
        dc = np.zeros_like(dh)
        for t in reversed(range(arch.obs_len)):
            dx, dh, dc = lstm_step_backward(encoder, encoder_caches[t], dh, dc, grads, 'gen.encoder')
            linear_backward(params, 'gen.embed', past[:, t], dx, grads)
        return grads

    return future, backward


def discriminator_forward(
    params: Params, arch: GanArchitecture, past: np.ndarray, future: np.ndarray
) -> Tuple[np.ndarray, Callable[[np.ndarray], Tuple[Params, np.ndarray]]]:
    """
    Batched discriminator logits (B, 1) for (B, M, 2) pasts and (B, N, 2) futures.
    The backward function maps d_logits to (``disc.`` gradients, d_future).
    """
    if past.shape[1:] != (arch.obs_len, 2) or future.shape[1:] != (arch.pred_len, 2):
        raise DataError(
            f'Discriminator needs {arch.obs_len} past and {arch.pred_len} future steps, '
            f'got {past.shape[1]} and {future.shape[1]}.',
            code='wrong_length',
        )
    sequence = np.concatenate([past, future], axis=1)
    batch = len(sequence)
    cell = LstmCellParams.view(params, 'disc.lstm')
    h = np.zeros((batch, arch.discriminator_hidden))
    c = np.zeros_like(h)
    caches = []
    for t in range(sequence.shape[1]):
        e = linear_forward(params, 'disc.embed', sequence[:, t])
        h, c, cache = lstm_step_cached(cell, e, h, c)
        caches.append(cache)
    logits = linear_forward(params, 'disc.head', h)
    final_hidden = h

    def backward(d_logits: np.ndarray) -> Tuple[Params, np.ndarray]:
        grads: Params = {}
        dh = linear_backward(params, 'disc.head', final_hidden, d_logits, grads)
        dc = np.zeros_like(dh)
        d_sequence = np.zeros_like(sequence)
        for t in reversed(range(sequence.shape[1])):
            dx, dh, dc = lstm_step_backward(cell, caches[t], dh, dc, grads, 'disc.lstm')
            d_sequence[:, t] = linear_backward(params, 'disc.embed', sequence[:, t], dx, grads)
        return grads, d_sequence[:, arch.obs_len:]

    return logits, backward


def generate(model: GanModel, past: RelativeTrajectory, noise: np.ndarray) -> RelativeTrajectory:
    """
    X_fut = G(z | X_past) for one noise vector.
    """
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    _check_noise(noise, model.architecture)
    return RelativeTrajectory(model.generate_batch(past, noise[None])[0], past.dt)


def sample_noise(k: int, rng_seed: int, noise_dim: int = NOISE_DIM) -> np.ndarray:
    """
    (k, noise_dim) standard-normal draws. Row j is the same for every k > j.
    """
    if k < 1:
        raise ConfigurationError(f'k must be at least 1, got {k}.')
    return make_rng(rng_seed).standard_normal((k, noise_dim))


def sample_k(model: GanModel, past: RelativeTrajectory, k: int, rng_seed: int) -> List[RelativeTrajectory]:
    noise = sample_noise(k, rng_seed, model.architecture.noise_dim)
    return [RelativeTrajectory(steps, past.dt) for steps in model.generate_batch(past, noise)]


def discriminate(model: GanModel, past: RelativeTrajectory, future: RelativeTrajectory) -> float:
    if len(past) != OBS_LEN or len(future) != PRED_LEN:
        raise DataError(
            f'Discriminator needs {OBS_LEN} past and {PRED_LEN} future steps, '
            f'got {len(past)} and {len(future)}.',
            code='wrong_length',
        )
    logits, _ = discriminator_forward(
        model.params, model.architecture, past.displacements[None], future.displacements[None]
    )
    return float(sigmoid(logits)[0, 0])


def variety_loss(
    model: GanModel,
    past: RelativeTrajectory,
    ground_truth_future: RelativeTrajectory,
    k: int,
    rng_seed: int,
) -> float:
    """
    Smallest summed squared displacement error among k samples.
    """
    samples = model.generate_batch(past, sample_noise(k, rng_seed, model.architecture.noise_dim))
    errors, _ = squared_error(samples, ground_truth_future.displacements[None])
    return float(errors.min())
