"""
Synthetic worlds: a traversability grid plus the rectangles that block it.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from django.conf import settings
from scipy import ndimage

from sceneintent.decorators import log_execution_time
from sceneintent.exceptions import ConfigurationError, DataError, GenerationError
from sceneintent.utils import make_rng

logger = logging.getLogger(__name__)

Rect = Tuple[float, float, float, float]  # x0, y0, x1, y1 in meters
Point = Tuple[float, float]

LAYOUTS = ('scatter', 'blocks', 'junction')


def rasterize(obstacles: List[Rect], shape: Tuple[int, int], resolution: float) -> np.ndarray:
    """
    Traversable mask for a grid: a cell is blocked when its center lies inside an obstacle.
    """
    rows, cols = shape
    centers_x = (np.arange(cols) + 0.5) * resolution
    centers_y = (np.arange(rows) + 0.5) * resolution
    mask = np.ones(shape, dtype=bool)
    for x0, y0, x1, y1 in obstacles:
        in_x = (centers_x >= x0) & (centers_x <= x1)
        in_y = (centers_y >= y0) & (centers_y <= y1)
        mask[np.ix_(in_y, in_x)] = False
    return mask


def connected_components(mask: np.ndarray) -> np.ndarray:
    """
    Label 4-connected traversable regions in raster order. Blocked cells get label 0.
    """
    labels, _ = ndimage.label(mask, structure=ndimage.generate_binary_structure(2, 1))
    return labels.astype(np.int32)


@dataclass(frozen=True)
class World:
    """
    A rectangular area of ``extent`` meters rasterized at ``resolution`` meters per cell.

    ``traversable_mask[row, col]`` covers x in [col, col + 1) * resolution and
    y in [row, row + 1) * resolution. ``starts`` and ``goals`` are optional route
    anchors; when present, each driving run is a single start-to-goal episode.
    """
    extent: Tuple[float, float]
    resolution: float
    traversable_mask: np.ndarray
    obstacles: Tuple[Rect, ...]
    seed: int
    layout: str = 'scatter'
    starts: Tuple[Point, ...] = field(default_factory=tuple)
    goals: Tuple[Point, ...] = field(default_factory=tuple)

    def __post_init__(self):
        mask = np.array(self.traversable_mask, dtype=bool, copy=True)
        mask.setflags(write=False)
        object.__setattr__(self, 'traversable_mask', mask)
        object.__setattr__(self, 'obstacles', tuple(tuple(map(float, r)) for r in self.obstacles))
        expected = rasterize(list(self.obstacles), mask.shape, self.resolution)
        if not np.array_equal(expected, mask):
            raise DataError(
                'Traversable mask disagrees with the obstacle list.', code='inconsistent_world'
            )
        if not mask.any():
            raise GenerationError('World has no traversable cell.', code='no_traversable_region')

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, World):
            return NotImplemented
        return (
            self.extent == other.extent
            and self.resolution == other.resolution
            and self.obstacles == other.obstacles
            and self.seed == other.seed
            and self.layout == other.layout
            and self.starts == other.starts
            and self.goals == other.goals
            and np.array_equal(self.traversable_mask, other.traversable_mask)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.traversable_mask.shape

    def blocked_fraction(self) -> float:
        return float(1.0 - self.traversable_mask.mean())

    def cell_of(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Grid indices for (n, 2) points plus a mask of points inside the extent.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        cols = np.floor(pts[:, 0] / self.resolution).astype(np.int64)
        rows = np.floor(pts[:, 1] / self.resolution).astype(np.int64)
        rows_n, cols_n = self.shape
        inside = (rows >= 0) & (rows < rows_n) & (cols >= 0) & (cols < cols_n)
        return rows, cols, inside

    def is_traversable(self, points: np.ndarray) -> np.ndarray:
        """
        Vectorized lookup; points outside the extent are not traversable.
        """
        rows, cols, inside = self.cell_of(points)
        result = np.zeros(len(rows), dtype=bool)
        result[inside] = self.traversable_mask[rows[inside], cols[inside]]
        return result

    def cell_center(self, row: int, col: int) -> Point:
        return ((col + 0.5) * self.resolution, (row + 0.5) * self.resolution)

    def largest_region(self) -> np.ndarray:
        """
        Boolean mask of the largest connected traversable region.
        """
        labels = connected_components(self.traversable_mask)
        counts = np.bincount(labels.ravel())
        counts[0] = 0
        return labels == int(np.argmax(counts))


def _grid_shape(extent: Tuple[float, float], resolution: float) -> Tuple[int, int]:
    width, height = extent
    return int(round(height / resolution)), int(round(width / resolution))


def _scatter_obstacles(
    rng: np.random.Generator, config: Mapping[str, Any], shape: Tuple[int, int]
) -> List[Rect]:
    width, height = config['extent']
    resolution = config['resolution']
    density = config['obstacle_density']
    low, high = config['min_obstacle_size'], config['max_obstacle_size']
    obstacles: List[Rect] = []
    if density == 0:
        return obstacles
    mask = np.ones(shape, dtype=bool)
    total = mask.size
    for _ in range(10_000):
        blocked = 1.0 - mask.sum() / total
        if blocked >= density:
            break
        w, h = rng.uniform(low, high, size=2)
        x0 = rng.uniform(0.0, max(width - w, 0.0))
        y0 = rng.uniform(0.0, max(height - h, 0.0))
        rect = (float(x0), float(y0), float(x0 + w), float(y0 + h))
        candidate = mask & rasterize([rect], shape, resolution)
        if 1.0 - candidate.sum() / total > density + 0.05:
            continue
        mask = candidate
        obstacles.append(rect)
    return obstacles


def _block_obstacles(rng: np.random.Generator, config: Mapping[str, Any]) -> List[Rect]:
    width, height = config['extent']
    block, street = config['block_size'], config['street_width']
    obstacles: List[Rect] = []
    pitch = block + street
    y0 = street
    while y0 < height - street:
        x0 = street
        while x0 < width - street:
            # Some lots stay open so the street graph has T-junctions as well as crossings.
            if rng.random() >= 0.15:
                obstacles.append(
                    (float(x0), float(y0), float(min(x0 + block, width - street)),
                     float(min(y0 + block, height - street)))
                )
            x0 += pitch
        y0 += pitch
    return obstacles


def _junction_layout(config: Mapping[str, Any]) -> Tuple[List[Rect], List[Point], List[Point]]:
    width, height = config['extent']
    road = config['junction_road_width']
    center = width / 2.0
    bar_top = height - road
    bar_bottom = bar_top - road
    stem_left, stem_right = center - road / 2.0, center + road / 2.0
    obstacles = [
        (0.0, 0.0, stem_left, bar_bottom),
        (stem_right, 0.0, width, bar_bottom),
        (0.0, bar_top, width, height),
    ]
    lane_y = (bar_top + bar_bottom) / 2.0
    starts = [(center, road / 2.0)]
    goals = [(road / 2.0, lane_y), (width - road / 2.0, lane_y)]
    return obstacles, starts, goals


def world_config(overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """
    Settings defaults merged with ``overrides``.
    """
    config = dict(settings.WORLD_GENERATION)
    config.update(overrides or {})
    return config


@log_execution_time
def generate_world(seed: int, config: Optional[Mapping[str, Any]] = None) -> World:
    """
    Generate a world deterministically from ``seed`` and the generation parameters.
    """
    cfg = world_config(config)
    width, height = cfg['extent']
    if width <= 0 or height <= 0 or cfg['resolution'] <= 0:
        raise ConfigurationError('World extent and resolution must be positive.')
    if not 0.0 <= cfg['obstacle_density'] < 1.0:
        raise ConfigurationError('Obstacle density must lie in [0, 1).')
    if cfg['layout'] not in LAYOUTS:
        raise ConfigurationError(f"Unknown layout {cfg['layout']!r}.")

    rng = make_rng(seed)
    shape = _grid_shape((width, height), cfg['resolution'])
    starts: List[Point] = []
    goals: List[Point] = []
    if cfg['layout'] == 'scatter':
        obstacles = _scatter_obstacles(rng, cfg, shape)
    elif cfg['layout'] == 'blocks':
        obstacles = _block_obstacles(rng, cfg)
    else:
        obstacles, starts, goals = _junction_layout(cfg)

    mask = rasterize(obstacles, shape, cfg['resolution'])
    if not mask.any():
        raise GenerationError(
            f'Configuration leaves no traversable region (seed {seed}).',
            code='no_traversable_region',
        )
    world = World(
        extent=(float(width), float(height)),
        resolution=float(cfg['resolution']),
        traversable_mask=mask,
        obstacles=tuple(obstacles),
        seed=int(seed),
        layout=cfg['layout'],
        starts=tuple(starts),
        goals=tuple(goals),
    )
    logger.info(
        f"Generated {cfg['layout']} world seed={seed} with {len(obstacles)} obstacles, "
        f"blocked fraction {world.blocked_fraction():.3f}"
    )
    return world
