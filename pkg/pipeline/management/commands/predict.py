"""
Scene-fused prediction for one dataset instance, with its overlays.
"""
import logging
from typing import Any, Mapping

from django.core.management.base import CommandParser

from forecasting.fusion import FusionConfig, fuse
from forecasting.serializers import read_model, write_prediction_jsonl
from pipeline.base import PipelineCommand
from pipeline.config import RunConfig
from scene.catalog import SceneCatalog
from scene.overlay import (
    prediction_layers,
    render_overlay,
    render_segmentation,
    render_traversability,
    render_world,
    write_ppm,
)
from sceneintent.utils import canonical_json, print_status
from trajectories.serializers import load_dataset, load_worlds

logger = logging.getLogger(__name__)

PREDICTIONS_NAME = 'predictions.jsonl'
OVERLAY_NAME = 'overlay.ppm'
WORLD_PLOT_NAME = 'world.ppm'
BACKGROUNDS = {
    'segmentation': render_segmentation,
    'traversability': render_traversability,
    'none': None,
}


class Command(PipelineCommand):
    help = 'Predict k scene-consistent futures for one instance and render them'

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument('--instance', required=True, help='Scene id of the instance to predict')
        parser.add_argument(
            '--background', choices=sorted(BACKGROUNDS), default='segmentation',
            help='Camera overlay background',
        )

    def run(self, run: RunConfig, options: Mapping[str, Any]) -> None:
        dataset_dir = run.path('dataset')
        model = read_model(run.path('checkpoint'))
        split, instance = load_dataset(dataset_dir).find(options['instance'])
        worlds = load_worlds(dataset_dir)
        seg, cam = SceneCatalog(worlds, dataset_dir).get(instance)
        out = run.output_directory()
        run.write(out)

        pred = fuse(model, instance.past, instance.agent_pose, seg, cam, FusionConfig.from_settings())
        truth = instance.future_world()
        count = write_prediction_jsonl(out / PREDICTIONS_NAME, pred, truth, instance.scene_id)

        layers = prediction_layers(
            instance.past_world().positions, truth.positions, pred.positions, pred.rejected_positions
        )
        render_background = BACKGROUNDS[options.get('background') or 'segmentation']
        background = render_background(seg) if render_background else None
        write_ppm(out / OVERLAY_NAME, render_overlay(background, cam, layers))
        world = worlds.get(instance.world_id)
        if world is not None:
            write_ppm(out / WORLD_PLOT_NAME, render_world(world, layers))

        logger.info(f"Predicted {count} trajectories for {instance.scene_id} ({split} split)")
        self.stdout.write(canonical_json(pred.summary()))
        status = 'warning' if pred.fallback_used else 'success'
        print_status(
            f"acceptance_rate={pred.acceptance_rate:.4f} fallback={'yes' if pred.fallback_used else 'no'}",
            status,
        )
