"""
Config validation, training checkpoints and prediction exports.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from rest_framework import serializers

from neural.optim import AdamState
from neural.serializers import read_params, write_params
from sceneintent.exceptions import DataError, DataFormatError
from sceneintent.utils import write_json
from trajectories.core import Trajectory

from .fusion import PredictionSet, select
from .gan import DISCRIMINATOR, GENERATOR, GanArchitecture, GanModel
from .training import EpochMetrics, TrainConfig, TrainingState

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_FORMAT = 'sceneintent-checkpoint'
_ADAM_SECTIONS = ('adam_generator', 'adam_discriminator')
SIDECAR_SUFFIX = '.json'


class GanArchitectureSerializer(serializers.Serializer):
    embed_dim = serializers.IntegerField(min_value=1)
    encoder_hidden = serializers.IntegerField(min_value=1)
    decoder_hidden = serializers.IntegerField(min_value=1)
    discriminator_hidden = serializers.IntegerField(min_value=1)
    noise_dim = serializers.IntegerField(min_value=8, max_value=8)
    obs_len = serializers.IntegerField(min_value=8, max_value=8)
    pred_len = serializers.IntegerField(min_value=8, max_value=8)


class TrainConfigSerializer(serializers.Serializer):
    epochs = serializers.IntegerField(min_value=0)
    batch_size = serializers.IntegerField(min_value=1)
    k_variety = serializers.IntegerField(min_value=1)
    lr_generator = serializers.FloatField(min_value=0.0)
    lr_discriminator = serializers.FloatField(min_value=0.0)
    real_label_range = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0), min_length=2, max_length=2
    )
    fake_label_range = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0), min_length=2, max_length=2
    )
    variety_weight = serializers.FloatField(min_value=0.0)
    validation_k = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0)

    def validate(self, attrs):
        for name in ('real_label_range', 'fake_label_range'):
            low, high = attrs[name]
            if low > high:
                raise serializers.ValidationError({name: 'Lower bound exceeds upper bound.'})
        if attrs['lr_generator'] == 0 or attrs['lr_discriminator'] == 0:
            raise serializers.ValidationError('Learning rates must be positive.')
        return attrs


class FusionConfigSerializer(serializers.Serializer):
    k = serializers.IntegerField(min_value=1)
    max_proposals = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0)

    def validate(self, attrs):
        if attrs['max_proposals'] < attrs['k']:
            raise serializers.ValidationError('max_proposals must be at least k.')
        return attrs


# Checkpoints

@dataclass(frozen=True)
class Checkpoint:
    state: TrainingState
    train_config: Dict[str, Any]
    manifest_sha256: str = ''


def _adam_meta(state: AdamState) -> Dict[str, Any]:
    return {'step': state.step, **state.hyperparameters()}


def sidecar_path(path: PathLike) -> Path:
    """
    ``checkpoint.bin`` -> ``checkpoint.bin.json``: training config and dataset manifest hash.
    """
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def _read_sidecar(path: PathLike) -> Dict[str, Any]:
    sidecar = sidecar_path(path)
    if not sidecar.exists():
        logger.warning(f"Checkpoint {path} has no sidecar {sidecar.name}; training config unknown")
        return {}
    try:
        data = json.loads(sidecar.read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise DataFormatError(f'Cannot read checkpoint sidecar {sidecar}: {e}') from e
    if not isinstance(data, dict) or data.get('format') != CHECKPOINT_FORMAT:
        raise DataFormatError(f'{sidecar} is not a checkpoint sidecar.')
    return data


def write_checkpoint(
    path: PathLike, state: TrainingState, cfg: TrainConfig, manifest_sha256: str = ''
) -> None:
    """
    Model parameters, both Adam states, the epoch count and the metric history go
    in the parameter file; the training config and manifest hash in its JSON sidecar.
    """
    sections = {
        'model': dict(state.model.params),
        'adam_generator.m': state.adam_generator.m,
        'adam_generator.v': state.adam_generator.v,
        'adam_discriminator.m': state.adam_discriminator.m,
        'adam_discriminator.v': state.adam_discriminator.v,
    }
    meta = {
        'format': CHECKPOINT_FORMAT,
        'architecture': state.model.architecture.as_dict(),
        'epoch': state.epoch,
        'history': [metrics.as_dict() for metrics in state.history],
        'adam_generator': _adam_meta(state.adam_generator),
        'adam_discriminator': _adam_meta(state.adam_discriminator),
    }
    write_params(path, sections, meta)
    write_json(sidecar_path(path), {
        'format': CHECKPOINT_FORMAT,
        'epoch': state.epoch,
        'train_config': cfg.as_dict(),
        'manifest_sha256': manifest_sha256,
    })
    logger.info(f"Wrote checkpoint {path} at epoch {state.epoch}")


def read_checkpoint(path: PathLike) -> Checkpoint:
    sections, meta = read_params(path)
    if meta.get('format') != CHECKPOINT_FORMAT:
        raise DataFormatError(f'{path} is not a training checkpoint.')
    try:
        model = GanModel(GanArchitecture(**meta['architecture']), sections['model'])
        adam = {}
        for name in _ADAM_SECTIONS:
            prefix = GENERATOR if name == 'adam_generator' else DISCRIMINATOR
            moments = {key: sections[f'{name}.{key}'] for key in ('m', 'v')}
            if set(moments['m']) != set(model.subset(prefix)):
                raise DataFormatError(f'Checkpoint {path} has Adam moments for the wrong parameters.')
            adam[name] = AdamState(**meta[name], **moments)
        history = tuple(EpochMetrics(**item) for item in meta['history'])
        state = TrainingState(
            model=model,
            adam_generator=adam['adam_generator'],
            adam_discriminator=adam['adam_discriminator'],
            epoch=int(meta['epoch']),
            history=history,
        )
    except DataFormatError:
        raise
    except (KeyError, TypeError, DataError) as e:
        raise DataFormatError(f'Checkpoint {path} is incomplete or inconsistent: {e}') from e
    sidecar = _read_sidecar(path)
    return Checkpoint(state, dict(sidecar.get('train_config', {})), str(sidecar.get('manifest_sha256', '')))


def read_model(path: PathLike) -> GanModel:
    return read_checkpoint(path).state.model


# Prediction export

def prediction_records(
    pred: PredictionSet,
    ground_truth: Optional[Trajectory] = None,
    scene_id: str = '',
) -> List[Dict[str, Any]]:
    """
    One record per returned trajectory with its waypoints, score and selection metadata.
    """
    chosen: Dict[int, List[str]] = {}
    if len(pred):
        chosen.setdefault(0, []).append('random')
    if ground_truth is not None and len(pred):
        best = select(pred, 'min_k', ground_truth)
        index = int(np.flatnonzero((pred.positions == best.positions).all(axis=(1, 2)))[0])
        chosen.setdefault(index, []).append('min_k')
    summary = pred.summary()
    return [
        {
            'scene_id': scene_id,
            'index': index,
            'waypoints': positions.tolist(),
            'score': float(pred.scores[index]),
            'accepted': index < pred.accepted_count,
            'selected_by': chosen.get(index, []),
            **summary,
        }
        for index, positions in enumerate(pred.positions)
    ]


def write_prediction_jsonl(
    path: PathLike,
    pred: PredictionSet,
    ground_truth: Optional[Trajectory] = None,
    scene_id: str = '',
) -> int:
    records = prediction_records(pred, ground_truth, scene_id)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + '\n')
    return len(records)


def read_prediction_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    try:
        lines = Path(path).read_text(encoding='utf-8').splitlines()
        return [json.loads(line) for line in lines if line.strip()]
    except (OSError, ValueError) as e:
        raise DataFormatError(f'Cannot read prediction file {path}: {e}') from e
