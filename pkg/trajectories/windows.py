"""
Windowing of trajectory logs into fixed-size training instances and
log-level train/val/test splitting.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from sceneintent.constants import DT, OBS_LEN, PRED_LEN, WINDOW_SPAN
from sceneintent.exceptions import ConfigurationError, DataError, InsufficientDataError, MissingInstanceError
from sceneintent.utils import make_rng
from sceneintent.validators import validate_dt

from .core import (
    Pose2D,
    RelativeTrajectory,
    Trajectory,
    heading_from_displacements,
    rotate_displacements,
    to_absolute,
    transform_to_local,
    transform_to_world,
)

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')


def make_scene_id(log_id: str, start: int) -> str:
    return f'{log_id}-{start:05d}'


@dataclass(frozen=True)
class TrainInstance:
    """
    One window of a log. ``past`` and ``future`` are displacements in the agent
    frame at the current time t, whose pose is ``agent_pose``.
    """
    past: RelativeTrajectory
    future: RelativeTrajectory
    agent_pose: Pose2D
    scene_id: str
    log_id: str = ''
    start: int = 0
    world_id: str = ''

    def __post_init__(self):
        if len(self.past) != OBS_LEN or len(self.future) != PRED_LEN:
            raise DataError(
                f'Instance needs {OBS_LEN} past and {PRED_LEN} future steps, '
                f'got {len(self.past)} and {len(self.future)}.',
                code='wrong_window',
            )
        validate_dt(self.past.dt, DT)
        validate_dt(self.future.dt, DT)

    def future_world(self) -> Trajectory:
        """
        Ground-truth positions at t+1 .. t+N in the world frame.
        """
        return transform_to_world(self.future, self.agent_pose)

    def past_world(self) -> Trajectory:
        """
        Observed positions at t-M .. t in the world frame (M + 1 points).
        """
        steps = rotate_displacements(self.past.displacements, self.agent_pose.heading)
        origin = self.agent_pose.as_array() - steps.sum(axis=0)
        tail = to_absolute(RelativeTrajectory(steps, self.past.dt), origin)
        return Trajectory(np.vstack([origin, tail.positions]), self.past.dt)


@dataclass(frozen=True)
class DatasetSplit:
    train: List[TrainInstance]
    val: List[TrainInstance]
    test: List[TrainInstance]
    split_seed: int
    assignment: Dict[str, str] = field(default_factory=dict)

    def get(self, split: str) -> List[TrainInstance]:
        if split not in SPLITS:
            raise ConfigurationError(f'Unknown split {split!r}.')
        return getattr(self, split)

    def counts(self) -> Dict[str, int]:
        return {name: len(self.get(name)) for name in SPLITS}

    def find(self, scene_id: str) -> Tuple[str, TrainInstance]:
        for name in SPLITS:
            for instance in self.get(name):
                if instance.scene_id == scene_id:
                    return name, instance
        raise MissingInstanceError(f"No instance with scene id {scene_id!r}.")


def window_log(traj: Trajectory, log_id: str = 'log', world_id: str = '') -> List[TrainInstance]:
    """
    Slide a stride-1 window of M + N + 1 positions over a log.

    The instance whose window starts at index s has current time t = s + M. Logs
    shorter than M + N + 1 positions yield no instances.
    """
    validate_dt(traj.dt, DT)
    count = len(traj) - WINDOW_SPAN
    instances: List[TrainInstance] = []
    positions = traj.positions
    for start in range(max(count, 0)):
        window = positions[start:start + WINDOW_SPAN + 1]
        steps = np.diff(window, axis=0)
        heading = heading_from_displacements(steps[:OBS_LEN])
        local = transform_to_local(RelativeTrajectory(steps, traj.dt), heading).displacements
        current = window[OBS_LEN]
        instances.append(TrainInstance(
            past=RelativeTrajectory(local[:OBS_LEN], traj.dt),
            future=RelativeTrajectory(local[OBS_LEN:], traj.dt),
            agent_pose=Pose2D((float(current[0]), float(current[1])), heading),
            scene_id=make_scene_id(log_id, start),
            log_id=log_id,
            start=start,
            world_id=world_id,
        ))
    return instances


def _split_counts(n_logs: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    total = float(sum(ratios))
    n_val = max(1, int(round(n_logs * ratios[1] / total)))
    n_test = max(1, int(round(n_logs * ratios[2] / total)))
    while n_logs - n_val - n_test < 1:
        if n_val >= n_test and n_val > 1:
            n_val -= 1
        else:
            n_test -= 1
    return n_logs - n_val - n_test, n_val, n_test


def split_dataset(
    instances_by_log: Mapping[str, List[TrainInstance]],
    ratios: Sequence[float] = (4, 1, 1),
    seed: int = 0,
) -> DatasetSplit:
    """
    Assign whole logs to train/val/test; windows of one log never straddle splits.
    """
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ConfigurationError('Split ratios must be three positive numbers.')
    log_ids = sorted(instances_by_log)
    if len(log_ids) < 3:
        raise InsufficientDataError(
            f'Need at least 3 source logs to split, got {len(log_ids)}.',
        )
    n_train, n_val, _ = _split_counts(len(log_ids), ratios)
    order = make_rng(seed).permutation(len(log_ids))
    assignment: Dict[str, str] = {}
    for rank, index in enumerate(order):
        if rank < n_train:
            assignment[log_ids[index]] = 'train'
        elif rank < n_train + n_val:
            assignment[log_ids[index]] = 'val'
        else:
            assignment[log_ids[index]] = 'test'
    buckets: Dict[str, List[TrainInstance]] = {name: [] for name in SPLITS}
    for log_id in log_ids:
        buckets[assignment[log_id]].extend(instances_by_log[log_id])
    split = DatasetSplit(
        train=buckets['train'],
        val=buckets['val'],
        test=buckets['test'],
        split_seed=int(seed),
        assignment=assignment,
    )
    logger.info(f"Split {len(log_ids)} logs into {split.counts()} instances")
    return split
