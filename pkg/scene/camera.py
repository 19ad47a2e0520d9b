"""
Pinhole camera over the ground plane z = 0.

Camera frame follows the OpenCV convention (x right, y down, z along the optical
axis). ``R`` and ``t`` give the camera pose in the world: a world point X maps
to camera coordinates R^T (X - t).
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from django.conf import settings
from scipy.spatial.transform import Rotation

from sceneintent.exceptions import DataError, DataFormatError
from sceneintent.utils import canonical_json
from sceneintent.validators import validate_finite, validate_intrinsics, validate_rotation, validate_shape
from trajectories.core import Pose2D

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Camera axes expressed in the vehicle frame (x forward, y left, z up).
_VEHICLE_FROM_CAMERA = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])

# Rays closer than this to parallel with the ground never reach it.
_PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class CameraModel:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = validate_finite(self.K, 'K')
        R = validate_finite(self.R, 'R')
        t = validate_finite(self.t, 't').reshape(-1)
        validate_intrinsics(K)
        validate_rotation(R)
        validate_shape(t, (3,), 't')
        if self.width < 1 or self.height < 1:
            raise DataError('Image size must be positive.', code='invalid_image_size')
        for name, value in (('K', K), ('R', R), ('t', t)):
            value = value.copy()
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'width', int(self.width))
        object.__setattr__(self, 'height', int(self.height))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.K, other.K)
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.t, other.t)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def size(self) -> Tuple[int, int]:
        return self.width, self.height

    def pose_matrix(self) -> np.ndarray:
        """
        4x4 camera-to-world transform.
        """
        pose = np.eye(4)
        pose[:3, :3] = self.R
        pose[:3, 3] = self.t
        return pose

    def project_many(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Project (n, 2) ground points. Returns (n, 2) sub-pixel coordinates and a
        visibility mask; invisible rows hold NaN.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        world = np.column_stack([pts, np.zeros(len(pts))])
        camera = (world - self.t) @ self.R
        depth = camera[:, 2]
        pixels = np.full((len(pts), 2), np.nan)
        visible = depth > 0
        if visible.any():
            image = camera[visible] @ self.K.T
            uv = image[:, :2] / image[:, 2:3]
            inside = (
                (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)
            )
            rows = np.flatnonzero(visible)
            visible[rows[~inside]] = False
            pixels[rows[inside]] = uv[inside]
        return pixels, visible

    def pixel_indices(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Column and row of the pixel containing each projected point, plus visibility.
        """
        pixels, visible = self.project_many(points)
        cols = np.zeros(len(pixels), dtype=np.int64)
        rows = np.zeros(len(pixels), dtype=np.int64)
        cols[visible] = np.floor(pixels[visible, 0]).astype(np.int64)
        rows[visible] = np.floor(pixels[visible, 1]).astype(np.int64)
        return cols, rows, visible

    def back_project_many(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Intersect the rays through (n, 2) pixel coordinates with z = 0. Returns
        (n, 2) ground points and a hit mask; rays parallel to or pointing away
        from the ground miss.
        """
        uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        homogeneous = np.column_stack([uv, np.ones(len(uv))])
        rays = np.linalg.solve(self.K, homogeneous.T).T @ self.R.T
        ground = np.full((len(uv), 2), np.nan)
        with np.errstate(divide='ignore', invalid='ignore'):
            scale = -self.t[2] / rays[:, 2]
        hit = (np.abs(rays[:, 2]) > _PARALLEL_EPS) & (scale > 0)
        ground[hit] = self.t[:2] + scale[hit, None] * rays[hit, :2]
        return ground, hit


def project(cam: CameraModel, x: np.ndarray) -> Optional[Tuple[float, float]]:
    """
    Pixel coordinate of a ground point, or None when it is outside the visible area.
    """
    pixels, visible = cam.project_many(np.asarray(x, dtype=np.float64).reshape(1, 2))
    if not visible[0]:
        return None
    return float(pixels[0, 0]), float(pixels[0, 1])


def back_project(cam: CameraModel, u: np.ndarray) -> Optional[Tuple[float, float]]:
    """
    Ground point seen at pixel ``u``, or None when the ray misses the ground.
    """
    ground, hit = cam.back_project_many(np.asarray(u, dtype=np.float64).reshape(1, 2))
    if not hit[0]:
        return None
    return float(ground[0, 0]), float(ground[0, 1])


@dataclass(frozen=True)
class CameraMount:
    """
    Forward-facing camera on the vehicle: ``height`` meters above the ground,
    tilted down by ``pitch`` radians, ``forward_offset`` meters ahead of the agent.
    """
    height: float = 1.2
    pitch: float = 0.3
    forward_offset: float = 0.0
    width: int = 96
    height_px: int = 72
    focal: float = 60.0

    def __post_init__(self):
        if self.height <= 0 or self.focal <= 0 or self.width < 1 or self.height_px < 1:
            raise DataError('Camera mount needs positive height, focal length and image size.')

    @classmethod
    def from_settings(cls, overrides: Optional[Mapping[str, Any]] = None) -> 'CameraMount':
        config = dict(settings.CAMERA_MOUNT)
        config.update(overrides or {})
        return cls(**config)

    def intrinsics(self) -> np.ndarray:
        return np.array([
            [self.focal, 0.0, self.width / 2.0],
            [0.0, self.focal, self.height_px / 2.0],
            [0.0, 0.0, 1.0],
        ])


def camera_rotation(heading: float, pitch: float) -> np.ndarray:
    """
    Camera-to-world rotation for a camera facing ``heading`` and tilted down by ``pitch``.
    """
    vehicle = Rotation.from_euler('ZY', [heading, pitch]).as_matrix()
    return vehicle @ _VEHICLE_FROM_CAMERA


def camera_for_pose(pose: Pose2D, mount: Optional[CameraMount] = None) -> CameraModel:
    mount = mount or CameraMount.from_settings()
    x, y = pose.position
    x += mount.forward_offset * math.cos(pose.heading)
    y += mount.forward_offset * math.sin(pose.heading)
    return CameraModel(
        K=mount.intrinsics(),
        R=camera_rotation(pose.heading, mount.pitch),
        t=np.array([x, y, mount.height]),
        width=mount.width,
        height=mount.height_px,
    )


# JSON files

def camera_to_dict(cam: CameraModel) -> Dict[str, Any]:
    return {
        'fx': float(cam.K[0, 0]),
        'fy': float(cam.K[1, 1]),
        'cx': float(cam.K[0, 2]),
        'cy': float(cam.K[1, 2]),
        'width': cam.width,
        'height': cam.height,
        'pose': cam.pose_matrix().tolist(),
    }


def camera_from_dict(data: Mapping[str, Any], source: str = '<dict>') -> CameraModel:
    try:
        pose = np.asarray(data['pose'], dtype=np.float64)
        if pose.shape != (4, 4):
            raise DataFormatError(f'Camera file {source} needs a 4x4 pose, got shape {pose.shape}.')
        K = np.array([
            [data['fx'], 0.0, data['cx']],
            [0.0, data['fy'], data['cy']],
            [0.0, 0.0, 1.0],
        ], dtype=np.float64)
        return CameraModel(K, pose[:3, :3], pose[:3, 3], int(data['width']), int(data['height']))
    except DataFormatError:
        raise
    except (KeyError, TypeError, ValueError, DataError) as e:
        raise DataFormatError(f'Invalid camera file {source}: {e}') from e


def write_camera(path: PathLike, cam: CameraModel) -> None:
    Path(path).write_text(canonical_json(camera_to_dict(cam)) + '\n', encoding='utf-8')


def read_camera(path: PathLike) -> CameraModel:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise DataFormatError(f'Cannot read camera file {path}: {e}') from e
    return camera_from_dict(data, str(path))
