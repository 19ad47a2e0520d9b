from typing import Tuple

import numpy as np

from sceneintent.constants import BCE_EPSILON

from .layers import sigmoid


def bce_loss(prediction: float, label: float) -> float:
    """
    Binary cross-entropy of one prediction, clamped to [eps, 1 - eps].
    """
    p = min(max(float(prediction), BCE_EPSILON), 1.0 - BCE_EPSILON)
    return float(-(label * np.log(p) + (1.0 - label) * np.log(1.0 - p)))


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean clamped BCE of ``sigmoid(logits)`` against ``labels`` and its gradient
    with respect to the logits. Clamped entries get zero gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.float64), logits.shape)
    p = sigmoid(logits)
    clamped = np.clip(p, BCE_EPSILON, 1.0 - BCE_EPSILON)
    losses = -(labels * np.log(clamped) + (1.0 - labels) * np.log(1.0 - clamped))
    inside = (p >= BCE_EPSILON) & (p <= 1.0 - BCE_EPSILON)
    d_p = np.where(inside, -(labels / clamped - (1.0 - labels) / (1.0 - clamped)), 0.0)
    d_logits = d_p * p * (1.0 - p) / logits.size
    return float(losses.mean()), d_logits


def squared_error(prediction: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Summed squared error over the last two axes (steps, coordinates) and its gradient.
    """
    diff = prediction - target
    return np.sum(diff ** 2, axis=(-2, -1)), 2.0 * diff
