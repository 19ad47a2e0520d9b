"""
Raster previews: camera-view overlays of trajectories and top-down world plots.
All images are (H, W, 3) uint8 arrays and are saved as binary PPM (P6).
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from sceneintent.exceptions import ShapeMismatchError
from trajectories.worlds import World

from .camera import CameraModel
from .segmentation import SegMap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Color = Tuple[int, int, int]

# Cityscapes palette for the 19 evaluation classes.
PALETTE: Tuple[Color, ...] = (
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156), (190, 153, 153),
    (153, 153, 153), (250, 170, 30), (220, 220, 0), (107, 142, 35), (152, 251, 152),
    (70, 130, 180), (220, 20, 60), (255, 0, 0), (0, 0, 142), (0, 0, 70),
    (0, 60, 100), (0, 80, 100), (0, 0, 230), (119, 11, 32),
)

BLACK: Color = (0, 0, 0)
GREEN: Color = (0, 200, 0)
RED: Color = (230, 0, 0)
BLUE: Color = (0, 60, 255)


@dataclass(frozen=True)
class Style:
    color: Color
    width: int = 1


STYLES = {
    'past': Style(BLACK),
    'ground_truth': Style(GREEN),
    'accepted': Style(RED),
    'rejected': Style(BLUE),
}

Layer = Tuple[np.ndarray, Style]


def render_segmentation(seg: SegMap) -> np.ndarray:
    """
    Each pixel coloured by its most likely class.
    """
    labels = np.argmax(seg.probs, axis=2)
    palette = np.array([PALETTE[i % len(PALETTE)] for i in range(seg.num_classes)], dtype=np.uint8)
    return palette[labels]


def render_traversability(seg: SegMap) -> np.ndarray:
    """
    Traversable probability as grey levels; white is certain ground.
    """
    grey = np.rint(np.clip(seg.traversable_probability(), 0.0, 1.0) * 255).astype(np.uint8)
    return np.repeat(grey[:, :, None], 3, axis=2)


def _draw(image: np.ndarray, layers: Sequence[Tuple[np.ndarray, np.ndarray, Style]]) -> np.ndarray:
    """
    Draw (pixel x, pixel y) polylines. Consecutive visible points are joined;
    every visible point gets a one-pixel marker.
    """
    canvas = Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), mode='RGB')
    draw = ImageDraw.Draw(canvas)
    for xy, visible, style in layers:
        for a in range(len(xy) - 1):
            if visible[a] and visible[a + 1]:
                draw.line([tuple(xy[a]), tuple(xy[a + 1])], fill=style.color, width=style.width)
        for point, shown in zip(xy, visible):
            if shown:
                draw.point(tuple(point), fill=style.color)
    return np.asarray(canvas, dtype=np.uint8).copy()


def render_overlay(background: Optional[np.ndarray], cam: CameraModel, layers: Sequence[Layer]) -> np.ndarray:
    """
    Project world-frame trajectories into the camera image. Markers sit on the
    pixel that contains each projected waypoint.
    """
    if background is None:
        background = np.full((cam.height, cam.width, 3), 255, dtype=np.uint8)
    elif background.shape != (cam.height, cam.width, 3):
        raise ShapeMismatchError(
            f'Background is {background.shape}, camera image is {(cam.height, cam.width, 3)}.'
        )
    projected = []
    for positions, style in layers:
        cols, rows, visible = cam.pixel_indices(np.asarray(positions).reshape(-1, 2))
        projected.append((np.column_stack([cols, rows]).tolist(), visible, style))
    return _draw(background, projected)


def render_world(world: World, layers: Sequence[Layer], scale: int = 4) -> np.ndarray:
    """
    Top-down plot of the world mask (north up) with world-frame trajectories.
    """
    rows_n, cols_n = world.shape
    image = np.where(world.traversable_mask[::-1, :, None], 255, 90).astype(np.uint8)
    image = np.repeat(np.repeat(np.repeat(image, 3, axis=2), scale, axis=0), scale, axis=1)
    projected = []
    for positions, style in layers:
        pts = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        cols = np.floor(pts[:, 0] / world.resolution * scale).astype(np.int64)
        rows = np.floor((rows_n - pts[:, 1] / world.resolution) * scale).astype(np.int64)
        visible = (cols >= 0) & (cols < cols_n * scale) & (rows >= 0) & (rows < rows_n * scale)
        projected.append((np.column_stack([cols, rows]).tolist(), visible, style))
    return _draw(image, projected)


def prediction_layers(
    past: Optional[np.ndarray],
    ground_truth: Optional[np.ndarray],
    accepted: np.ndarray,
    rejected: Optional[np.ndarray] = None,
) -> List[Layer]:
    """
    Standard layer stack: rejected below accepted, each group's mean drawn bold,
    then the past and the ground truth on top.
    """
    layers: List[Layer] = []
    for group, name in ((rejected, 'rejected'), (accepted, 'accepted')):
        if group is None or len(group) == 0:
            continue
        style = STYLES[name]
        layers.extend((positions, style) for positions in group)
        layers.append((np.mean(group, axis=0), Style(style.color, width=2)))
    if past is not None:
        layers.append((past, STYLES['past']))
    if ground_truth is not None:
        layers.append((ground_truth, STYLES['ground_truth']))
    return layers


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), mode='RGB').save(path, format='PPM')
    logger.debug(f"Wrote {image.shape[1]}x{image.shape[0]} image {path}")


def read_ppm(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert('RGB'), dtype=np.uint8).copy()
