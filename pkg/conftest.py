"""
Pytest configuration and fixtures.
"""
import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import pytest
from django.core.management import call_command

from forecasting.gan import GanArchitecture, GanModel
from scene.camera import CameraModel, camera_rotation
from trajectories.worlds import World, generate_world

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sceneintent.settings')

# One open world, five short runs, small camera and network: seconds, not minutes.
TINY_CONFIG: Dict[str, Any] = {
    'seed': 11,
    'k': 5,
    'world_generation': {'extent': [20.0, 20.0], 'obstacle_density': 0.0, 'layout': 'scatter'},
    'driving': {'duration': 12.0},
    'dataset': {'worlds': [{'layout': 'scatter', 'runs': 5}], 'ratios': [2, 1, 1], 'scene_splits': ['test']},
    'camera_mount': {'width': 32, 'height_px': 24, 'focal': 20.0},
    'gan_architecture': {'embed_dim': 4, 'encoder_hidden': 6, 'decoder_hidden': 6, 'discriminator_hidden': 5},
    'training': {'epochs': 2, 'batch_size': 8, 'k_variety': 3, 'validation_k': 3},
    'fusion': {'max_proposals': 200},
    'evaluation': {'k_max': 5, 'max_instances': 3},
}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def open_world() -> World:
    """20 m x 20 m world without obstacles."""
    return generate_world(0, {'obstacle_density': 0.0, 'extent': [20.0, 20.0], 'layout': 'scatter'})


@pytest.fixture
def level_camera() -> CameraModel:
    """640x480 camera one meter above the origin, looking along +x."""
    return CameraModel(
        K=np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]]),
        R=camera_rotation(0.0, 0.0),
        t=np.array([0.0, 0.0, 1.0]),
        width=640,
        height=480,
    )


@pytest.fixture
def small_arch() -> GanArchitecture:
    return GanArchitecture(embed_dim=4, encoder_hidden=5, decoder_hidden=6, discriminator_hidden=5)


@pytest.fixture
def small_model(small_arch: GanArchitecture) -> GanModel:
    return GanModel.initialize(small_arch, 0)


@pytest.fixture
def tiny_config_data() -> Dict[str, Any]:
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture(scope='session')
def tiny_config(tmp_path_factory: pytest.TempPathFactory) -> Path:
    path = tmp_path_factory.mktemp('config') / 'tiny.json'
    path.write_text(json.dumps(TINY_CONFIG), encoding='utf-8')
    return path


@pytest.fixture(scope='session')
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory, tiny_config: Path) -> Path:
    """Dataset directory generated with the tiny configuration."""
    out = tmp_path_factory.mktemp('dataset')
    call_command('gen_dataset', config=str(tiny_config), out=str(out))
    return out


@pytest.fixture(scope='session')
def tiny_checkpoint(tmp_path_factory: pytest.TempPathFactory, tiny_config: Path, tiny_dataset: Path) -> Path:
    """Checkpoint of a two-epoch run on the tiny dataset."""
    out = tmp_path_factory.mktemp('train')
    call_command('train', config=str(tiny_config), dataset=str(tiny_dataset), out=str(out))
    return out / 'checkpoint.bin'


@pytest.fixture(scope='session')
def trained_run(tmp_path_factory: pytest.TempPathFactory) -> Tuple[Path, Path]:
    """Dataset and checkpoint of a full run on the settings defaults. Minutes, not seconds."""
    root = tmp_path_factory.mktemp('trained')
    call_command('gen_dataset', out=str(root / 'dataset'))
    call_command('train', dataset=str(root / 'dataset'), out=str(root / 'model'))
    return root / 'dataset', root / 'model' / 'checkpoint.bin'


def pytest_collection_modifyitems(items: list) -> None:
    """Add markers to tests based on location."""
    for item in items:
        if 'pipeline' in str(item.fspath):
            item.add_marker(pytest.mark.integration)
        else:
            item.add_marker(pytest.mark.unit)
