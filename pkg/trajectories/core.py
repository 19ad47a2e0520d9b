"""
Trajectory value types and frame transforms.

World frame: fixed, right-handed, 2-D; headings counter-clockwise from +x.
All types are immutable; arrays are copied on construction and marked read-only.
"""
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from sceneintent.constants import DT
from sceneintent.exceptions import DataError, DegenerateInputError
from sceneintent.validators import validate_dt, validate_finite, validate_points

Point = Tuple[float, float]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


def normalize_angle(angle: float) -> float:
    """
    Wrap an angle into (-pi, pi].
    """
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Trajectory:
    """
    Time-ordered 2-D positions (meters) at a fixed spacing ``dt`` (seconds).
    """
    positions: np.ndarray
    dt: float = DT

    def __post_init__(self):
        points = validate_points(self.positions, 'trajectory', min_length=1)
        validate_dt(self.dt)
        object.__setattr__(self, 'positions', _frozen(points))

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.positions, other.positions)

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]], dt: float = DT) -> 'Trajectory':
        return cls(np.asarray(list(points), dtype=np.float64).reshape(-1, 2), dt)

    def as_array(self) -> np.ndarray:
        return self.positions


@dataclass(frozen=True)
class RelativeTrajectory:
    """
    Consecutive displacements (meters) at a fixed spacing ``dt`` (seconds).
    """
    displacements: np.ndarray
    dt: float = DT

    def __post_init__(self):
        steps = validate_points(self.displacements, 'relative trajectory', min_length=1)
        validate_dt(self.dt)
        object.__setattr__(self, 'displacements', _frozen(steps))

    def __len__(self) -> int:
        return len(self.displacements)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RelativeTrajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.displacements, other.displacements)

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_steps(cls, steps: Iterable[Sequence[float]], dt: float = DT) -> 'RelativeTrajectory':
        return cls(np.asarray(list(steps), dtype=np.float64).reshape(-1, 2), dt)

    def as_array(self) -> np.ndarray:
        return self.displacements


@dataclass(frozen=True)
class Pose2D:
    """
    Position (meters) and heading (radians, normalized to (-pi, pi]).
    """
    position: Point = (0.0, 0.0)
    heading: float = 0.0

    def __post_init__(self):
        x, y = validate_finite(self.position, 'pose position')
        if not math.isfinite(self.heading):
            raise DataError('Pose heading must be finite.', code='non_finite')
        object.__setattr__(self, 'position', (float(x), float(y)))
        object.__setattr__(self, 'heading', normalize_angle(float(self.heading)))

    def as_array(self) -> np.ndarray:
        return np.array(self.position, dtype=np.float64)


def to_relative(traj: Trajectory) -> RelativeTrajectory:
    """
    Difference consecutive positions.
    """
    if len(traj) < 2:
        raise DegenerateInputError(
            f'Need at least 2 positions to form displacements, got {len(traj)}.',
            code='too_short',
        )
    return RelativeTrajectory(np.diff(traj.positions, axis=0), traj.dt)


def to_absolute(rel: RelativeTrajectory, origin: Sequence[float]) -> Trajectory:
    """
    Accumulate displacements from ``origin``. The origin itself is not emitted.
    """
    if len(rel) == 0:
        raise DegenerateInputError('Relative trajectory is empty.', code='empty')
    start = validate_finite(origin, 'origin').reshape(2)
    positions = np.cumsum(np.vstack([start, rel.displacements]), axis=0)[1:]
    return Trajectory(positions, rel.dt)


def rotate_displacements(steps: np.ndarray, angle: float) -> np.ndarray:
    """
    Rotate an (n, 2) or (..., n, 2) array of displacements counter-clockwise by ``angle``.
    """
    return np.asarray(steps, dtype=np.float64) @ rotation_matrix(angle).T


def transform_to_world(rel_local: RelativeTrajectory, agent: Pose2D) -> Trajectory:
    """
    Map agent-frame displacements to world positions starting at the agent pose.
    """
    world_steps = rotate_displacements(rel_local.displacements, agent.heading)
    return to_absolute(RelativeTrajectory(world_steps, rel_local.dt), agent.position)


def transform_to_local(rel_world: RelativeTrajectory, heading: float) -> RelativeTrajectory:
    """
    Inverse rotation of ``transform_to_world``: express world displacements in the agent frame.
    """
    return RelativeTrajectory(
        rotate_displacements(rel_world.displacements, -heading), rel_world.dt
    )


def batch_to_world(local_steps: np.ndarray, agent: Pose2D) -> np.ndarray:
    """
    Vectorized ``transform_to_world`` for a (b, n, 2) batch; returns world positions.
    """
    world_steps = rotate_displacements(local_steps, agent.heading)
    origin = np.broadcast_to(agent.as_array(), world_steps.shape[:-2] + (1, 2))
    return np.cumsum(np.concatenate([origin, world_steps], axis=-2), axis=-2)[..., 1:, :]


def heading_from_displacements(steps: np.ndarray) -> float:
    """
    Direction of the most recent non-zero displacement, or 0 when the agent never moved.
    """
    for dx, dy in np.asarray(steps)[::-1]:
        if dx != 0.0 or dy != 0.0:
            return normalize_angle(math.atan2(dy, dx))
    return 0.0

