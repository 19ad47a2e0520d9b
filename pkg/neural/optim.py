"""
Adam with bias correction over flat parameter dictionaries.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Tuple

import numpy as np

from sceneintent.constants import ADAM_DEFAULTS
from sceneintent.exceptions import ConfigurationError, NonFiniteGradientError, ShapeMismatchError

from .layers import Params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamState:
    learning_rate: float = ADAM_DEFAULTS['learning_rate']
    beta1: float = ADAM_DEFAULTS['beta1']
    beta2: float = ADAM_DEFAULTS['beta2']
    epsilon: float = ADAM_DEFAULTS['epsilon']
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f'Learning rate must be positive, got {self.learning_rate}.')
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError('Adam betas must lie in [0, 1).')
        if self.step < 0:
            raise ConfigurationError('Adam step count cannot be negative.')

    @classmethod
    def create(cls, params: Params, **hyper: Any) -> 'AdamState':
        """
        Fresh state with zero moments shaped like ``params``.
        """
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
            **hyper,
        )

    def hyperparameters(self) -> Dict[str, float]:
        return {
            'learning_rate': self.learning_rate,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'epsilon': self.epsilon,
        }


def adam_update(state: AdamState, params: Params, grads: Params) -> Tuple[Params, AdamState]:
    """
    One bias-corrected Adam step. Parameters without a gradient entry get a zero
    gradient. Returns new parameter and state objects; inputs are not modified.
    """
    unknown = set(grads) - set(params)
    if unknown:
        raise ShapeMismatchError(f'Gradients for unknown parameters: {sorted(unknown)}.')
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(f'Gradient of {name} contains non-finite values.')
        if np.shape(grads[name]) != np.shape(params[name]):
            raise ShapeMismatchError(
                f'Gradient of {name} has shape {np.shape(grads[name])}, '
                f'parameter has {np.shape(params[name])}.'
            )

    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for name in sorted(params):
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(params[name])
        m_prev = state.m.get(name, np.zeros_like(params[name]))
        v_prev = state.v.get(name, np.zeros_like(params[name]))
        m = state.beta1 * m_prev + (1.0 - state.beta1) * grad
        v = state.beta2 * v_prev + (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = params[name] - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, step=step, m=new_m, v=new_v)

