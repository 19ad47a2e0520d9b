from typing import Tuple

import numpy as np

from sceneintent.exceptions import ShapeMismatchError
from sceneintent.validators import validate_dt
from trajectories.core import Trajectory


def _check_pair(pred: Trajectory, truth: Trajectory) -> None:
    if len(pred) != len(truth):
        raise ShapeMismatchError(
            f'Prediction has {len(pred)} waypoints, ground truth has {len(truth)}.',
            code='length_mismatch',
        )
    validate_dt(pred.dt, truth.dt)


def ade(pred: Trajectory, truth: Trajectory) -> float:
    """
    Average displacement error: mean Euclidean distance over waypoints.
    """
    _check_pair(pred, truth)
    return float(np.mean(np.linalg.norm(pred.positions - truth.positions, axis=1)))


def fde(pred: Trajectory, truth: Trajectory) -> float:
    """
    Final displacement error: distance between the last waypoints.
    """
    _check_pair(pred, truth)
    return float(np.linalg.norm(pred.positions[-1] - truth.positions[-1]))


def displacement_errors(predictions: np.ndarray, truth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batched ADE and FDE of (..., n, 2) predicted positions against (n, 2) ground truth.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape[-2:] != truth.shape[-2:]:
        raise ShapeMismatchError(
            f'Predictions {predictions.shape} do not match ground truth {truth.shape}.',
            code='length_mismatch',
        )
    distances = np.linalg.norm(predictions - truth, axis=-1)
    return distances.mean(axis=-1), distances[..., -1]
