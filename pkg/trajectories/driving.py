"""
Synthetic driver: a waypoint-following unicycle with bounded turn rate,
Gaussian heading noise and stop-and-go pauses.
"""
import logging
import math
from collections import deque
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from django.conf import settings

from sceneintent.constants import DT, WINDOW_SPAN
from sceneintent.exceptions import ConfigurationError
from sceneintent.utils import make_rng

from .core import Trajectory, normalize_angle
from .worlds import World

logger = logging.getLogger(__name__)

POLICIES = ('route', 'straight')

_NEIGHBORS_8 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))

# Sub-step used to check that the straight segment between two samples stays clear.
_SEGMENT_CHECK = 0.1
_MAX_STUCK_STEPS = 20


def driving_config(overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    config = dict(settings.DRIVING)
    config.update(overrides or {})
    return config


def erode(mask: np.ndarray) -> np.ndarray:
    """
    Keep cells whose 8 neighbours are all traversable; gives routes half a cell of clearance.
    """
    padded = np.pad(mask, 1, constant_values=False)
    eroded = mask.copy()
    rows, cols = mask.shape
    for dr, dc in _NEIGHBORS_8:
        eroded &= padded[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
    return eroded


def plan_route(free: np.ndarray, start: Tuple[int, int], goal: Tuple[int, int]) -> List[Tuple[int, int]]:
    """
    Breadth-first shortest path on an 8-connected grid. Diagonal moves need both
    orthogonal neighbours free. Returns an empty list when the goal is unreachable.
    """
    rows, cols = free.shape
    parent: Dict[Tuple[int, int], Tuple[int, int]] = {start: start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            break
        r, c = cell
        for dr, dc in _NEIGHBORS_8:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < rows and 0 <= nc < cols) or not free[nr, nc]:
                continue
            if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
                continue
            if (nr, nc) not in parent:
                parent[(nr, nc)] = cell
                queue.append((nr, nc))
    if goal not in parent:
        return []
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def segment_clear(world: World, a: np.ndarray, b: np.ndarray) -> bool:
    """
    True when the straight segment from ``a`` to ``b`` only crosses traversable cells.
    """
    length = float(np.hypot(*(b - a)))
    samples = max(2, int(math.ceil(length / _SEGMENT_CHECK)) + 1)
    ts = np.linspace(0.0, 1.0, samples)[:, None]
    return bool(world.is_traversable(a + ts * (b - a)).all())


class RouteDriver:
    """
    Drives one run through ``world`` following BFS routes with pure-pursuit steering.
    """

    def __init__(self, world: World, rng: np.random.Generator, config: Mapping[str, Any]):
        self.world = world
        self.rng = rng
        self.config = config
        self.free = erode(world.traversable_mask) & world.largest_region()
        if not self.free.any():
            self.free = world.largest_region()
        self.free_cells = np.argwhere(self.free)

    def _random_cell(self) -> Tuple[int, int]:
        r, c = self.free_cells[self.rng.integers(len(self.free_cells))]
        return int(r), int(c)

    def _cell_of(self, point: Tuple[float, float]) -> Tuple[int, int]:
        rows, cols, _ = self.world.cell_of(np.array([point]))
        return int(rows[0]), int(cols[0])

    def _route(self, start: Tuple[int, int], goal: Tuple[int, int]) -> np.ndarray:
        cells = plan_route(self.free, start, goal)
        return np.array([self.world.cell_center(r, c) for r, c in cells], dtype=np.float64)

    def _pick_episode(self) -> Tuple[np.ndarray, bool]:
        """
        First route of a run and whether the run ends at its goal.
        """
        if self.world.starts and self.world.goals:
            start = self.world.starts[self.rng.integers(len(self.world.starts))]
            goal = self.world.goals[self.rng.integers(len(self.world.goals))]
            return self._route(self._cell_of(start), self._cell_of(goal)), True
        return self._route(self._random_cell(), self._random_cell()), False

    def run(self, steps: int) -> Optional[np.ndarray]:
        cfg = self.config
        path, episodic = self._pick_episode()
        if len(path) < 2:
            return None
        position = path[0].copy()
        heading = math.atan2(*(path[1] - path[0])[::-1])
        cruise = self.rng.uniform(cfg['min_speed'], cfg['max_speed'])
        max_turn = cfg['max_turn_rate'] * DT
        low_stop, high_stop = cfg['stop_steps']
        index = 0
        paused = 0
        stuck = 0
        positions = [position.copy()]
        for _ in range(steps):
            if np.hypot(*(path[-1] - position)) < cfg['goal_tolerance']:
                if episodic:
                    break
                path = self._route(self._cell_of(tuple(position)), self._random_cell())
                index = 0
                if len(path) < 2:
                    break
            if paused:
                paused -= 1
                positions.append(position.copy())
                continue
            if self.rng.random() < cfg['stop_probability']:
                paused = int(self.rng.integers(low_stop, high_stop + 1)) - 1
                positions.append(position.copy())
                continue

            # Pursue the furthest route point within the lookahead that is in line of sight.
            while (
                index < len(path) - 1
                and np.hypot(*(path[index] - position)) < cfg['lookahead']
                and segment_clear(self.world, position, path[index + 1])
            ):
                index += 1
            target = path[index]
            desired = math.atan2(target[1] - position[1], target[0] - position[0])
            turn = float(np.clip(normalize_angle(desired - heading), -max_turn, max_turn))
            heading = normalize_angle(heading + turn + self.rng.normal(0.0, cfg['heading_noise']))
            speed = cruise * max(0.4, math.cos(turn))
            step = speed * DT * np.array([math.cos(heading), math.sin(heading)])
            candidate = position + step
            if segment_clear(self.world, position, candidate):
                position = candidate
                stuck = 0
            else:
                # Hold position this step; the heading keeps turning toward the route.
                stuck += 1
                if stuck > _MAX_STUCK_STEPS:
                    break
            positions.append(position.copy())
        return np.array(positions)


def drive_straight(world: World, rng: np.random.Generator, config: Mapping[str, Any], steps: int) -> Optional[np.ndarray]:
    """
    Constant heading and speed, no noise, no pauses; stops before leaving traversable ground.
    """
    free_cells = np.argwhere(world.largest_region())
    r, c = free_cells[rng.integers(len(free_cells))]
    position = np.array(world.cell_center(int(r), int(c)))
    center = np.array(world.extent) / 2.0
    heading = math.atan2(center[1] - position[1], center[0] - position[0])
    heading += rng.uniform(-math.pi / 6, math.pi / 6)
    speed = rng.uniform(config['min_speed'], config['max_speed'])
    step = speed * DT * np.array([math.cos(heading), math.sin(heading)])
    positions = [position]
    for i in range(1, steps + 1):
        candidate = positions[0] + i * step
        if not segment_clear(world, positions[-1], candidate):
            break
        positions.append(candidate)
    return np.array(positions)


def drive_scenarios(
    world: World,
    n_runs: int,
    seed: int,
    config: Optional[Mapping[str, Any]] = None,
) -> List[Trajectory]:
    """
    Drive ``n_runs`` independent runs. Runs that cannot reach a goal or end up
    shorter than one training window are skipped and reported in the log.
    """
    cfg = driving_config(config)
    if cfg['policy'] not in POLICIES:
        raise ConfigurationError(f"Unknown driving policy {cfg['policy']!r}.")
    if cfg['max_speed'] > 2.0 or cfg['min_speed'] <= 0 or cfg['min_speed'] > cfg['max_speed']:
        raise ConfigurationError('Speeds must satisfy 0 < min_speed <= max_speed <= 2.0 m/s.')
    steps = int(round(cfg['duration'] / DT))
    trajectories: List[Trajectory] = []
    skipped = 0
    for run in range(n_runs):
        rng = make_rng(seed, run)
        if cfg['policy'] == 'straight':
            positions = drive_straight(world, rng, cfg, steps)
        else:
            positions = RouteDriver(world, rng, cfg).run(steps)
        if positions is None or len(positions) < WINDOW_SPAN + 1:
            skipped += 1
            logger.warning(f"Run {run} on world seed={world.seed} skipped: unreachable or too short")
            continue
        trajectories.append(Trajectory(positions, DT))
    logger.info(
        f"Drove {len(trajectories)} runs on world seed={world.seed} ({skipped} skipped), "
        f"{sum(len(t) for t in trajectories)} positions"
    )
    return trajectories
