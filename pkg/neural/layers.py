"""
Linear and LSTM layers over flat parameter dictionaries.

Parameters live in a ``Dict[str, np.ndarray]`` keyed ``'<prefix>.<name>'``;
gradients use the same keys. Batched inputs have shape (batch, features) and
every function also accepts a single 1-D vector.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from sceneintent.constants import FORGET_BIAS_INIT
from sceneintent.exceptions import ShapeMismatchError
from sceneintent.validators import validate_finite, validate_shape

Params = Dict[str, np.ndarray]
Tensor2 = np.ndarray

GATES = ('i', 'f', 'g', 'o')


def tensor2(data, rows: int, cols: int, name: str = 'tensor') -> Tensor2:
    """
    Row-major (rows, cols) float64 array with finite entries.
    """
    array = validate_finite(data, name)
    if array.size != rows * cols:
        raise ShapeMismatchError(f'{name}: {array.size} values for a {rows}x{cols} tensor.')
    return array.reshape(rows, cols)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(params: Params, rng: np.random.Generator, prefix: str, in_features: int, out_features: int) -> None:
    params[f'{prefix}.W'] = _uniform(rng, in_features, (out_features, in_features))
    params[f'{prefix}.b'] = _uniform(rng, in_features, (out_features,))


def init_lstm(params: Params, rng: np.random.Generator, prefix: str, input_size: int, hidden_size: int) -> None:
    fan_in = input_size + hidden_size
    for gate in GATES:
        params[f'{prefix}.W_{gate}'] = _uniform(rng, fan_in, (hidden_size, fan_in))
    for gate in GATES:
        params[f'{prefix}.b_{gate}'] = _uniform(rng, fan_in, (hidden_size,))
    params[f'{prefix}.b_f'] = np.full(hidden_size, FORGET_BIAS_INIT)


def _accumulate(grads: Optional[Params], key: str, value: np.ndarray) -> None:
    if grads is None:
        return
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


def linear_forward(params: Params, prefix: str, x: np.ndarray) -> np.ndarray:
    weight = params[f'{prefix}.W']
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatchError(
            f'{prefix}: input has {x.shape[-1]} features, layer expects {weight.shape[1]}.'
        )
    return x @ weight.T + params[f'{prefix}.b']


def linear_backward(params: Params, prefix: str, x: np.ndarray, dy: np.ndarray, grads: Optional[Params]) -> np.ndarray:
    """
    Accumulate weight and bias gradients into ``grads``; return the input gradient.
    """
    x2 = np.atleast_2d(x)
    dy2 = np.atleast_2d(dy)
    _accumulate(grads, f'{prefix}.W', dy2.T @ x2)
    _accumulate(grads, f'{prefix}.b', dy2.sum(axis=0))
    return dy @ params[f'{prefix}.W']


@dataclass(frozen=True)
class LstmCellParams:
    """
    Gate weights (hidden, input + hidden) and biases (hidden,) of one LSTM cell.
    """
    W_i: np.ndarray
    W_f: np.ndarray
    W_g: np.ndarray
    W_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        hidden, total = self.W_i.shape
        if total <= hidden:
            raise ShapeMismatchError(f'LSTM weights {self.W_i.shape} leave no input columns.')
        for gate in GATES:
            validate_shape(getattr(self, f'W_{gate}'), (hidden, total), f'W_{gate}')
            validate_shape(getattr(self, f'b_{gate}'), (hidden,), f'b_{gate}')

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]

    @classmethod
    def view(cls, params: Params, prefix: str) -> 'LstmCellParams':
        return cls(**{name: params[f'{prefix}.{name}'] for name in cls.__dataclass_fields__})

    def to_params(self, prefix: str) -> Params:
        return {f'{prefix}.{name}': getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class LstmCache:
    xh: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray


def _check_step_shapes(cell: LstmCellParams, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray) -> None:
    if x.shape[-1] != cell.input_size:
        raise ShapeMismatchError(f'input size is {x.shape[-1]}, cell expects {cell.input_size}.')
    if h_prev.shape[-1] != cell.hidden_size:
        raise ShapeMismatchError(f'h_prev size is {h_prev.shape[-1]}, cell expects {cell.hidden_size}.')
    if c_prev.shape[-1] != cell.hidden_size:
        raise ShapeMismatchError(f'c_prev size is {c_prev.shape[-1]}, cell expects {cell.hidden_size}.')
    if h_prev.shape[:-1] != x.shape[:-1] or c_prev.shape[:-1] != x.shape[:-1]:
        raise ShapeMismatchError(
            f'batch dimension disagrees: x {x.shape}, h_prev {h_prev.shape}, c_prev {c_prev.shape}.'
        )


def lstm_step_cached(
    cell: LstmCellParams, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, LstmCache]:
    _check_step_shapes(cell, x, h_prev, c_prev)
    xh = np.concatenate([x, h_prev], axis=-1)
    i = sigmoid(xh @ cell.W_i.T + cell.b_i)
    f = sigmoid(xh @ cell.W_f.T + cell.b_f)
    g = np.tanh(xh @ cell.W_g.T + cell.b_g)
    o = sigmoid(xh @ cell.W_o.T + cell.b_o)
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmCache(xh, i, f, g, o, c_prev, tanh_c)


def lstm_step(
    cell: LstmCellParams, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One LSTM step without peepholes:

        i = sigmoid(W_i [x; h] + b_i)    f = sigmoid(W_f [x; h] + b_f)
        g = tanh(W_g [x; h] + b_g)       o = sigmoid(W_o [x; h] + b_o)
        c = f * c_prev + i * g           h = o * tanh(c)
    """
    h, c, _ = lstm_step_cached(cell, x, h_prev, c_prev)
    return h, c


def lstm_step_backward(
    cell: LstmCellParams,
    cache: LstmCache,
    dh: np.ndarray,
    dc: np.ndarray,
    grads: Optional[Params],
    prefix: str,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Backpropagate one step. Returns gradients for (x, h_prev, c_prev).
    """
    do = dh * cache.tanh_c
    dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    di = dc_total * cache.g
    dg = dc_total * cache.i
    df = dc_total * cache.c_prev
    dc_prev = dc_total * cache.f

    dz = {
        'i': di * cache.i * (1.0 - cache.i),
        'f': df * cache.f * (1.0 - cache.f),
        'g': dg * (1.0 - cache.g ** 2),
        'o': do * cache.o * (1.0 - cache.o),
    }
    xh2 = np.atleast_2d(cache.xh)
    dxh = np.zeros_like(cache.xh)
    for gate in GATES:
        dz2 = np.atleast_2d(dz[gate])
        _accumulate(grads, f'{prefix}.W_{gate}', dz2.T @ xh2)
        _accumulate(grads, f'{prefix}.b_{gate}', dz2.sum(axis=0))
        dxh = dxh + dz[gate] @ getattr(cell, f'W_{gate}')
    split = cell.input_size
    return dxh[..., :split], dxh[..., split:], dc_prev
