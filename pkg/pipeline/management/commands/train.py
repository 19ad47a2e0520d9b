"""
Train the conditional GAN on the train split of a dataset.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import pandas as pd
from django.core.management.base import CommandParser

from forecasting.gan import GanArchitecture, GanModel
from forecasting.serializers import read_checkpoint, write_checkpoint
from forecasting.training import EpochMetrics, TrainConfig, TrainingState, train
from pipeline.base import PipelineCommand
from pipeline.config import RunConfig
from sceneintent.exceptions import TrainingDivergedError
from sceneintent.utils import print_status, sha256_file
from trajectories.serializers import MANIFEST_NAME, load_dataset

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.bin'
METRICS_NAME = 'metrics.csv'
METRICS_COLUMNS = ['epoch', 'd_loss', 'g_loss', 'val_min_k_ade']


def write_metrics(path: Path, history: Sequence[EpochMetrics]) -> None:
    frame = pd.DataFrame([metrics.as_dict() for metrics in history], columns=METRICS_COLUMNS)
    frame.to_csv(path, index=False, float_format='%.9g', lineterminator='\n')


class Command(PipelineCommand):
    help = 'Train the trajectory GAN, writing a checkpoint and metrics after every epoch'

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument('--epochs', type=int, help='Total number of completed epochs to reach')
        parser.add_argument(
            '--resume', action='store_true',
            help='Continue from the checkpoint given with --checkpoint',
        )

    def section_flags(self, options: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
        return {'training': {'epochs': options.get('epochs')}}

    def _resume_state(self, run: RunConfig, cfg: TrainConfig, manifest_sha: str) -> TrainingState:
        path = run.path('checkpoint')
        checkpoint = read_checkpoint(path)
        if checkpoint.manifest_sha256 and checkpoint.manifest_sha256 != manifest_sha:
            logger.warning(f"Checkpoint {path} was trained on a different manifest")
        previous = {key: value for key, value in checkpoint.train_config.items() if key != 'epochs'}
        current = {key: value for key, value in cfg.as_dict().items() if key != 'epochs'}
        if previous and previous != current:
            logger.warning(f"Training config differs from checkpoint {path}; the resumed run will not match")
        print_status(f"Resuming from {path} at epoch {checkpoint.state.epoch}", 'info')
        return checkpoint.state

    def run(self, run: RunConfig, options: Mapping[str, Any]) -> None:
        dataset_dir = run.path('dataset')
        split = load_dataset(dataset_dir)
        manifest_sha = sha256_file(dataset_dir / MANIFEST_NAME)
        cfg = TrainConfig.from_settings()
        out = run.output_directory()
        run.write(out)

        state: Optional[TrainingState] = None
        if options.get('resume'):
            state = self._resume_state(run, cfg, manifest_sha)
            model = state.model
        else:
            model = GanModel.initialize(GanArchitecture.from_settings(), cfg.seed)

        def save(current: TrainingState) -> None:
            write_checkpoint(out / CHECKPOINT_NAME, current, cfg, manifest_sha)
            write_metrics(out / METRICS_NAME, current.history)

        try:
            state = train(model, split, cfg, state=state, on_epoch=save)
        except TrainingDivergedError as e:
            if e.last_good is not None:
                save(e.last_good)
            print_status(f"✗ Training diverged; kept the checkpoint of epoch {e.epoch}", 'error')
            raise
        save(state)

        last: Optional[EpochMetrics] = state.history[-1] if state.history else None
        print_status(f"✓ Trained to epoch {state.epoch}; checkpoint at {out / CHECKPOINT_NAME}", 'success')
        if last is not None:
            print_status(f"val min{cfg.validation_k} ADE {last.val_min_k_ade:.4f}", 'info')
