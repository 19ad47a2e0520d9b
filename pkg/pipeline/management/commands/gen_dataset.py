"""
Generate a synthetic dataset: worlds, driven logs, windowed split and scenes.
"""
import logging
from typing import Any, Dict, List, Mapping

from pipeline.base import PipelineCommand
from pipeline.config import RunConfig
from scene.camera import CameraMount
from scene.catalog import render_scene, write_scene
from sceneintent.utils import derive_seed, ensure_directory, print_status
from trajectories.driving import drive_scenarios
from trajectories.serializers import MANIFEST_NAME, write_log, write_manifest, write_world
from trajectories.windows import SPLITS, TrainInstance, split_dataset, window_log
from trajectories.worlds import World, generate_world

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Generate worlds, trajectory logs, the instance manifest and scene files'

    def run(self, run: RunConfig, options: Mapping[str, Any]) -> None:
        out = run.output_directory()
        sections = run.sections
        worlds_dir = ensure_directory(out / 'worlds')
        logs_dir = ensure_directory(out / 'logs')

        worlds: Dict[str, World] = {}
        instances_by_log: Dict[str, List[TrainInstance]] = {}
        for index, entry in enumerate(sections['dataset']['worlds']):
            world_id = f'world-{index:02d}'
            world = generate_world(
                derive_seed(run.seed, index),
                {**sections['world_generation'], 'layout': entry['layout']},
            )
            write_world(worlds_dir / f'{world_id}.txt', world)
            worlds[world_id] = world

            driving = dict(sections['driving'])
            if entry.get('policy'):
                driving['policy'] = entry['policy']
            logs = drive_scenarios(world, entry['runs'], derive_seed(run.seed, index, 1), driving)
            for number, traj in enumerate(logs):
                log_id = f'{world_id}-run-{number:03d}'
                write_log(logs_dir / f'{log_id}.csv', traj)
                instances_by_log[log_id] = window_log(traj, log_id, world_id)

        dataset = split_dataset(instances_by_log, sections['dataset']['ratios'], run.seed)
        lines = write_manifest(out / MANIFEST_NAME, dataset)

        mount = CameraMount.from_settings()
        scene_count = 0
        for split in sections['dataset']['scene_splits']:
            for instance in dataset.get(split):
                write_scene(out, instance.scene_id, render_scene(instance, worlds[instance.world_id], mount))
                scene_count += 1
        run.write(out)

        counts = dataset.counts()
        logger.info(f"Dataset {out}: {len(worlds)} worlds, {len(instances_by_log)} logs, {lines} instances")
        print_status(f"✓ Wrote {len(instances_by_log)} logs and {scene_count} scenes to {out}", 'success')
        for split in SPLITS:
            print_status(f"{split}: {counts[split]} instances", 'info')
