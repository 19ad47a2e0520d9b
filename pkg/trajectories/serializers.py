"""
File formats of the dataset directory and validation of its configuration.

Layout written by ``gen_dataset``::

    config.json                 resolved configuration echo
    manifest.jsonl              one line per training instance
    worlds/<world_id>.txt       key-value header plus '#'/'.' grid
    logs/<log_id>.csv           t,x,y samples
    scenes/<scene_id>.segmap    scene files for the splits listed in DATASET['scene_splits']
    scenes/<scene_id>.camera.json
"""
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd
from rest_framework import serializers

from sceneintent.constants import DT, LOG_HEADER, LOG_SIGNIFICANT_DIGITS
from sceneintent.exceptions import DataFormatError, IntentError

from .core import Trajectory
from .driving import POLICIES
from .windows import SPLITS, DatasetSplit, TrainInstance, window_log
from .worlds import LAYOUTS, World

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_NAME = 'manifest.jsonl'
CONFIG_NAME = 'config.json'
MANIFEST_FIELDS = ('log_id', 'world_id', 'start', 'split', 'scene_id')


class WorldConfigSerializer(serializers.Serializer):
    extent = serializers.ListField(
        child=serializers.FloatField(min_value=0.5), min_length=2, max_length=2
    )
    resolution = serializers.FloatField(min_value=0.01)
    obstacle_density = serializers.FloatField(min_value=0.0)
    layout = serializers.ChoiceField(choices=LAYOUTS)
    min_obstacle_size = serializers.FloatField(min_value=0.0)
    max_obstacle_size = serializers.FloatField(min_value=0.0)
    block_size = serializers.FloatField(min_value=0.5)
    street_width = serializers.FloatField(min_value=0.5)
    junction_road_width = serializers.FloatField(min_value=0.5)

    def validate_obstacle_density(self, value):
        if value >= 1.0:
            raise serializers.ValidationError('Obstacle density must be below 1.')
        return value

    def validate(self, attrs):
        if attrs['min_obstacle_size'] > attrs['max_obstacle_size']:
            raise serializers.ValidationError(
                {'min_obstacle_size': 'Must not exceed max_obstacle_size.'}
            )
        return attrs


class DrivingConfigSerializer(serializers.Serializer):
    policy = serializers.ChoiceField(choices=POLICIES)
    duration = serializers.FloatField(min_value=0.5)
    min_speed = serializers.FloatField(min_value=0.01)
    max_speed = serializers.FloatField(min_value=0.01, max_value=2.0)
    max_turn_rate = serializers.FloatField(min_value=0.0, max_value=1.0)
    heading_noise = serializers.FloatField(min_value=0.0)
    lookahead = serializers.FloatField(min_value=0.0)
    stop_probability = serializers.FloatField(min_value=0.0, max_value=1.0)
    stop_steps = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2
    )
    goal_tolerance = serializers.FloatField(min_value=0.0)

    def validate(self, attrs):
        if attrs['min_speed'] > attrs['max_speed']:
            raise serializers.ValidationError({'min_speed': 'Must not exceed max_speed.'})
        low, high = attrs['stop_steps']
        if low > high:
            raise serializers.ValidationError({'stop_steps': 'Expected [low, high] with low <= high.'})
        return attrs


class DatasetWorldSerializer(serializers.Serializer):
    layout = serializers.ChoiceField(choices=LAYOUTS)
    runs = serializers.IntegerField(min_value=1)
    policy = serializers.ChoiceField(choices=POLICIES, required=False)


class DatasetConfigSerializer(serializers.Serializer):
    worlds = DatasetWorldSerializer(many=True, allow_empty=False)
    ratios = serializers.ListField(
        child=serializers.FloatField(min_value=0.0), min_length=3, max_length=3
    )
    scene_splits = serializers.ListField(child=serializers.ChoiceField(choices=SPLITS))

    def validate_ratios(self, value):
        if min(value) <= 0:
            raise serializers.ValidationError('All split ratios must be positive.')
        return value


# Trajectory logs

def write_log(path: PathLike, traj: Trajectory) -> None:
    """
    Write a log as CSV ``t,x,y`` with 9 significant digits.
    """
    t = np.arange(len(traj), dtype=np.float64) * traj.dt
    frame = pd.DataFrame({'t': t, 'x': traj.positions[:, 0], 'y': traj.positions[:, 1]})
    frame.to_csv(
        path,
        index=False,
        float_format=f'%.{LOG_SIGNIFICANT_DIGITS}g',
        lineterminator='\n',
        encoding='utf-8',
    )


def read_log(path: PathLike) -> Trajectory:
    try:
        frame = pd.read_csv(path, dtype=np.float64, encoding='utf-8')
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise DataFormatError(f'Cannot read trajectory log {path}: {e}') from e
    if ','.join(frame.columns) != LOG_HEADER:
        raise DataFormatError(f'Trajectory log {path} must have header {LOG_HEADER!r}.')
    if frame.empty:
        raise DataFormatError(f'Trajectory log {path} has no samples.')
    t = frame['t'].to_numpy()
    if len(t) > 1:
        steps = np.diff(t)
        dt = float(np.round(steps[0], LOG_SIGNIFICANT_DIGITS))
        if np.any(np.abs(steps - dt) > 1e-6):
            raise DataFormatError(f'Trajectory log {path} is not evenly sampled.')
    else:
        dt = DT
    try:
        return Trajectory(frame[['x', 'y']].to_numpy(), dt)
    except IntentError as e:
        raise DataFormatError(f'Trajectory log {path}: {e.detail}') from e


# World files

def _format_floats(*values: float) -> str:
    return ' '.join(repr(float(v)) for v in values)


def render_world(world: World) -> str:
    """
    World as text: header lines ``key = value`` then a ``grid`` line and the
    mask rows from the top (largest y) down.
    """
    lines = [
        f'extent = {_format_floats(*world.extent)}',
        f'resolution = {_format_floats(world.resolution)}',
        f'seed = {world.seed}',
        f'layout = {world.layout}',
    ]
    lines += [f'obstacle = {_format_floats(*rect)}' for rect in world.obstacles]
    lines += [f'start = {_format_floats(*point)}' for point in world.starts]
    lines += [f'goal = {_format_floats(*point)}' for point in world.goals]
    lines.append('grid')
    for row in world.traversable_mask[::-1]:
        lines.append(''.join('.' if cell else '#' for cell in row))
    return '\n'.join(lines) + '\n'


def parse_world(text: str, source: str = '<string>') -> World:
    header: Dict[str, List[str]] = defaultdict(list)
    lines = text.split('\n')
    try:
        grid_at = lines.index('grid')
    except ValueError:
        raise DataFormatError(f'World file {source} has no grid section.')
    for line in lines[:grid_at]:
        if not line.strip():
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise DataFormatError(f'World file {source}: malformed header line {line!r}.')
        header[key.strip()].append(value.strip())

    rows = [line for line in lines[grid_at + 1:] if line]
    if not rows or len({len(row) for row in rows}) != 1 or set(''.join(rows)) - {'.', '#'}:
        raise DataFormatError(f'World file {source}: grid must be equal-length rows of "." and "#".')
    mask = np.array([[cell == '.' for cell in row] for row in rows[::-1]], dtype=bool)

    def floats(value: str, count: int) -> tuple:
        parts = value.split()
        if len(parts) != count:
            raise DataFormatError(f'World file {source}: expected {count} numbers in {value!r}.')
        return tuple(float(p) for p in parts)

    try:
        return World(
            extent=floats(header['extent'][0], 2),
            resolution=floats(header['resolution'][0], 1)[0],
            traversable_mask=mask,
            obstacles=tuple(floats(v, 4) for v in header['obstacle']),
            seed=int(header['seed'][0]),
            layout=header['layout'][0] if header['layout'] else 'scatter',
            starts=tuple(floats(v, 2) for v in header['start']),
            goals=tuple(floats(v, 2) for v in header['goal']),
        )
    except (IndexError, ValueError) as e:
        raise DataFormatError(f'World file {source}: missing or invalid header value ({e}).') from e
    except IntentError as e:
        raise DataFormatError(f'World file {source}: {e.detail}') from e


def write_world(path: PathLike, world: World) -> None:
    Path(path).write_text(render_world(world), encoding='utf-8', newline='\n')


def read_world(path: PathLike) -> World:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise DataFormatError(f'Cannot read world file {path}: {e}') from e
    return parse_world(text, str(path))


# Manifest

def manifest_record(instance: TrainInstance, split: str) -> Dict[str, Any]:
    return {
        'log_id': instance.log_id,
        'world_id': instance.world_id,
        'start': instance.start,
        'split': split,
        'scene_id': instance.scene_id,
    }


def write_manifest(path: PathLike, dataset: DatasetSplit) -> int:
    """
    Write one JSON line per instance, in split then window order. Returns the line count.
    """
    records = [
        manifest_record(instance, split)
        for split in SPLITS
        for instance in dataset.get(split)
    ]
    frame = pd.DataFrame.from_records(records, columns=list(MANIFEST_FIELDS))
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        if records:
            handle.write(frame.to_json(orient='records', lines=True).rstrip('\n') + '\n')
    return len(records)


def read_manifest(path: PathLike) -> pd.DataFrame:
    try:
        frame = pd.read_json(path, orient='records', lines=True, dtype=False)
    except (OSError, ValueError) as e:
        raise DataFormatError(f'Cannot read manifest {path}: {e}') from e
    missing = set(MANIFEST_FIELDS) - set(frame.columns)
    if frame.empty or missing:
        raise DataFormatError(f'Manifest {path} is empty or lacks fields {sorted(missing)}.')
    if not frame['split'].isin(SPLITS).all():
        raise DataFormatError(f'Manifest {path} has an unknown split tag.')
    return frame


def read_dataset_config(directory: PathLike) -> Dict[str, Any]:
    path = Path(directory, CONFIG_NAME)
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except ValueError as e:
        raise DataFormatError(f'Cannot parse {path}: {e}') from e


def load_worlds(directory: PathLike) -> Dict[str, World]:
    return {
        path.stem: read_world(path)
        for path in sorted(Path(directory, 'worlds').glob('*.txt'))
    }


def load_dataset(directory: PathLike) -> DatasetSplit:
    """
    Rebuild the split recorded in a dataset directory by re-windowing its logs.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataFormatError(f'Dataset manifest {manifest_path} does not exist.')
    frame = read_manifest(manifest_path)
    instances: Dict[str, Dict[int, TrainInstance]] = {}
    buckets: Dict[str, List[TrainInstance]] = {name: [] for name in SPLITS}
    assignment: Dict[str, str] = {}
    for record in frame.to_dict(orient='records'):
        log_id = str(record['log_id'])
        if log_id not in instances:
            traj = read_log(directory / 'logs' / f'{log_id}.csv')
            windows = window_log(traj, log_id, str(record['world_id']))
            instances[log_id] = {instance.start: instance for instance in windows}
        start = int(record['start'])
        if start not in instances[log_id]:
            raise DataFormatError(
                f'Manifest {manifest_path} names window {start} beyond the end of log {log_id}.'
            )
        if assignment.setdefault(log_id, record['split']) != record['split']:
            raise DataFormatError(f'Manifest {manifest_path} puts log {log_id} in two splits.')
        buckets[record['split']].append(instances[log_id][start])
    seed = int(read_dataset_config(directory).get('seed', 0))
    dataset = DatasetSplit(
        train=buckets['train'],
        val=buckets['val'],
        test=buckets['test'],
        split_seed=seed,
        assignment=assignment,
    )
    logger.info(f"Loaded dataset {directory} with {dataset.counts()} instances")
    return dataset

