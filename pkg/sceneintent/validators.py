from typing import Any, Dict, Optional

import numpy as np

from .constants import DT_TOLERANCE, PROBABILITY_TOLERANCE, ROTATION_TOLERANCE
from .exceptions import ConfigurationError, DataError, DegenerateInputError, ShapeMismatchError


def validate_finite(values: Any, name: str) -> np.ndarray:
    """
    Validate that every entry of an array is finite.
    """
    array = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise DataError(f'{name} contains non-finite values.', code='non_finite')
    return array


def validate_shape(array: np.ndarray, shape: tuple, name: str) -> None:
    """
    Validate an array shape. ``None`` entries in ``shape`` match any size.
    """
    if array.ndim != len(shape):
        raise ShapeMismatchError(
            f'{name}: expected {len(shape)} dimensions, got {array.ndim}.',
            code='wrong_ndim',
        )
    for axis, (actual, expected) in enumerate(zip(array.shape, shape)):
        if expected is not None and actual != expected:
            raise ShapeMismatchError(
                f'{name}: dimension {axis} is {actual}, expected {expected}.',
                code='wrong_dimension',
            )


def validate_points(values: Any, name: str, min_length: int = 1) -> np.ndarray:
    """
    Validate an ordered list of 2-D points and return it as an (n, 2) array.
    """
    array = validate_finite(values, name)
    if array.ndim == 1 and array.size == 0:
        array = array.reshape(0, 2)
    validate_shape(array, (None, 2), name)
    if len(array) < min_length:
        raise DegenerateInputError(
            f'{name} needs at least {min_length} points, got {len(array)}.',
            code='too_short',
        )
    return array


def validate_dt(dt: float, other: Optional[float] = None) -> None:
    """
    Validate a time step, and its agreement with another one when given.
    """
    if not np.isfinite(dt) or dt <= 0:
        raise DataError(f'Time step must be positive, got {dt}.', code='invalid_dt')
    if other is not None and abs(dt - other) > DT_TOLERANCE:
        raise DataError(f'Time steps disagree: {dt} vs {other}.', code='dt_mismatch')


def validate_rotation(rotation: np.ndarray) -> None:
    """
    Validate that a 3x3 matrix is a proper rotation.
    """
    validate_shape(rotation, (3, 3), 'rotation')
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=ROTATION_TOLERANCE):
        raise DataError('Rotation is not orthonormal.', code='invalid_rotation')
    if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOLERANCE:
        raise DataError('Rotation determinant is not +1.', code='invalid_rotation')


def validate_intrinsics(intrinsics: np.ndarray) -> None:
    """
    Validate an upper-triangular intrinsic matrix with positive focal lengths.
    """
    validate_shape(intrinsics, (3, 3), 'intrinsics')
    lower = intrinsics[np.tril_indices(3, k=-1)]
    if np.any(np.abs(lower) > ROTATION_TOLERANCE):
        raise DataError('Intrinsic matrix is not upper-triangular.', code='invalid_intrinsics')
    if intrinsics[0, 0] <= 0 or intrinsics[1, 1] <= 0:
        raise DataError('Focal lengths must be positive.', code='invalid_intrinsics')
    if abs(intrinsics[2, 2] - 1.0) > ROTATION_TOLERANCE:
        raise DataError('Intrinsic matrix must have K[2, 2] = 1.', code='invalid_intrinsics')


def validate_config(serializer_class: Any, data: Any, name: str) -> Dict[str, Any]:
    """
    Run a DRF serializer over a config mapping and return the validated data.
    """
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise ConfigurationError(f'Invalid {name} configuration: {dict(serializer.errors)}')
    return dict(serializer.validated_data)


def validate_simplex(probs: np.ndarray, axis: int = -1) -> None:
    """
    Validate that probabilities are non-negative and sum to one along an axis.
    """
    if np.any(probs < 0):
        raise DataError('Probabilities must be non-negative.', code='negative_probability')
    sums = np.sum(probs, axis=axis, dtype=np.float64)
    if np.any(np.abs(sums - 1.0) > PROBABILITY_TOLERANCE):
        raise DataError('Probabilities must sum to one.', code='unnormalized')
