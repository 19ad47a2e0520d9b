"""
Scene likelihood of trajectories from a segmentation seen through a camera.

Each waypoint scores 1 inside the footprint disk, 0.5 outside the visible area,
and otherwise the traversable probability of the pixel it projects into.
Waypoints are independent, so a trajectory scores the product of its waypoints.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from sceneintent.constants import FOOTPRINT_SCORE, OUTSIDE_VISIBLE_SCORE
from sceneintent.exceptions import DataError, DegenerateInputError, ShapeMismatchError
from sceneintent.validators import validate_finite
from trajectories.core import Trajectory

from .camera import CameraModel
from .segmentation import SegMap

logger = logging.getLogger(__name__)

# Traversable probability below which a visible waypoint counts as off-road.
OFFROAD_THRESHOLD = 0.5


@dataclass(frozen=True)
class FootprintDisk:
    center: Tuple[float, float]
    radius: float

    def __post_init__(self):
        x, y = validate_finite(self.center, 'footprint center')
        if not self.radius > 0:
            raise DataError(f'Footprint radius must be positive, got {self.radius}.', code='invalid_radius')
        object.__setattr__(self, 'center', (float(x), float(y)))
        object.__setattr__(self, 'radius', float(self.radius))

    def contains(self, points: np.ndarray) -> np.ndarray:
        offsets = np.asarray(points, dtype=np.float64).reshape(-1, 2) - np.array(self.center)
        return np.hypot(offsets[:, 0], offsets[:, 1]) <= self.radius


class SceneScorer:
    """
    Vectorized waypoint and trajectory scores for one (segmentation, camera, footprint).
    """

    def __init__(self, seg: SegMap, cam: CameraModel, foot: FootprintDisk):
        if (seg.width, seg.height) != cam.size:
            raise ShapeMismatchError(
                f'Segmentation is {seg.width}x{seg.height} but the camera image is '
                f'{cam.width}x{cam.height}.'
            )
        self.seg = seg
        self.cam = cam
        self.foot = foot
        self._traversable = seg.traversable_probability()

    def _lookup(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        cols, rows, visible = self.cam.pixel_indices(points)
        probs = np.zeros(len(cols))
        probs[visible] = self._traversable[rows[visible], cols[visible]]
        return probs, visible, self.foot.contains(points)

    def waypoint_scores(self, points: np.ndarray) -> np.ndarray:
        """
        Scores of (n, 2) world points.
        """
        probs, visible, in_foot = self._lookup(points)
        scores = np.where(visible, probs, OUTSIDE_VISIBLE_SCORE)
        return np.clip(np.where(in_foot, FOOTPRINT_SCORE, scores), 0.0, 1.0)

    def score_batch(self, positions: np.ndarray) -> np.ndarray:
        """
        (n, N, 2) world positions -> (n,) trajectory scores.
        """
        positions = np.asarray(positions, dtype=np.float64)
        if positions.ndim != 3 or positions.shape[-1] != 2:
            raise ShapeMismatchError(f'Expected (n, N, 2) positions, got {positions.shape}.')
        scores = self.waypoint_scores(positions.reshape(-1, 2)).reshape(positions.shape[:2])
        return np.prod(scores, axis=1)

    def offroad(self, positions: np.ndarray) -> np.ndarray:
        """
        (n,) flags for trajectories with a visible waypoint outside the footprint
        whose traversable probability is below one half.
        """
        positions = np.asarray(positions, dtype=np.float64)
        probs, visible, in_foot = self._lookup(positions.reshape(-1, 2))
        flagged = visible & ~in_foot & (probs < OFFROAD_THRESHOLD)
        return flagged.reshape(positions.shape[:2]).any(axis=1)


def waypoint_prob(x: np.ndarray, seg: SegMap, cam: CameraModel, foot: FootprintDisk) -> float:
    return float(SceneScorer(seg, cam, foot).waypoint_scores(np.asarray(x).reshape(1, 2))[0])


def trajectory_prob(traj: Trajectory, seg: SegMap, cam: CameraModel, foot: FootprintDisk) -> float:
    if len(traj) == 0:
        raise DegenerateInputError('Trajectory is empty.', code='empty')
    return float(SceneScorer(seg, cam, foot).score_batch(traj.positions[None])[0])
