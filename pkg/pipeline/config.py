"""
Run configuration of the pipeline commands.

Values are layered: Django settings < JSON ``--config`` file < command-line
flags. The merged result is validated section by section and echoed before a
command starts; feeding the echo back through ``--config`` reproduces the run.
"""
import copy
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type

from django.conf import settings
from rest_framework import serializers

from evaluation.serializers import EvaluationConfigSerializer
from forecasting.serializers import FusionConfigSerializer, GanArchitectureSerializer, TrainConfigSerializer
from scene.serializers import CameraMountSerializer, SceneConfigSerializer
from sceneintent.exceptions import ConfigurationError
from sceneintent.utils import canonical_json, write_json
from sceneintent.validators import validate_config
from trajectories.serializers import (
    CONFIG_NAME,
    DatasetConfigSerializer,
    DrivingConfigSerializer,
    WorldConfigSerializer,
)

logger = logging.getLogger(__name__)

# section name -> (settings attribute, serializer)
SECTIONS: Dict[str, Tuple[str, Type[serializers.Serializer]]] = {
    'world_generation': ('WORLD_GENERATION', WorldConfigSerializer),
    'driving': ('DRIVING', DrivingConfigSerializer),
    'dataset': ('DATASET', DatasetConfigSerializer),
    'scene': ('SCENE', SceneConfigSerializer),
    'camera_mount': ('CAMERA_MOUNT', CameraMountSerializer),
    'gan_architecture': ('GAN_ARCHITECTURE', GanArchitectureSerializer),
    'training': ('TRAINING', TrainConfigSerializer),
    'fusion': ('FUSION', FusionConfigSerializer),
    'evaluation': ('EVALUATION', EvaluationConfigSerializer),
}

PATHS = ('out', 'dataset', 'checkpoint')
TOP_LEVEL = ('command', 'seed', 'k', 'paths')

# Sections whose ``seed`` and ``k`` follow the run-level values.
SEEDED_SECTIONS = ('training', 'fusion', 'evaluation')
K_SECTIONS = ('fusion', 'evaluation')


def writable(directory: Path) -> bool:
    return os.access(directory, os.W_OK | os.X_OK)


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int
    k: int
    paths: Dict[str, Optional[str]] = field(default_factory=dict)
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'seed': self.seed,
            'k': self.k,
            'paths': dict(self.paths),
            **copy.deepcopy(self.sections),
        }

    def echo(self) -> str:
        return canonical_json(self.as_dict())

    def settings_overrides(self) -> Dict[str, Any]:
        return {SECTIONS[name][0]: copy.deepcopy(values) for name, values in self.sections.items()}

    def path(self, name: str, required: bool = True) -> Optional[Path]:
        value = self.paths.get(name)
        if value is None:
            if required:
                raise ConfigurationError(f'The {self.command} command needs --{name}.')
            return None
        return Path(value)

    def output_directory(self) -> Path:
        """
        The ``--out`` directory, created if needed and checked for write access.
        """
        directory = self.path('out')
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigurationError(f'Cannot create output directory {directory}: {e}') from e
        if not writable(directory):
            raise ConfigurationError(f'Output directory {directory} is not writable.')
        return directory

    def write(self, directory: Path) -> Path:
        """
        Write the configuration next to the outputs. Paths are left out so the
        directory content does not depend on where it was written.
        """
        path = Path(directory, CONFIG_NAME)
        data = self.as_dict()
        del data['paths']
        write_json(path, data)
        return path


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as e:
        raise ConfigurationError(f'Cannot read config file {path}: {e}') from e
    except ValueError as e:
        raise ConfigurationError(f'Config file {path} is not valid JSON: {e}') from e
    if not isinstance(data, dict):
        raise ConfigurationError(f'Config file {path} must hold a JSON object.')
    unknown = sorted(set(data) - set(TOP_LEVEL) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f'Config file {path} has unknown keys {unknown}.')
    return data


def _merge_section(name: str, base: Dict[str, Any], *layers: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    serializer_class = SECTIONS[name][1]
    known = set(serializer_class().fields)
    merged = dict(base)
    for layer in layers:
        if not layer:
            continue
        if not isinstance(layer, Mapping):
            raise ConfigurationError(f'Section {name!r} must be a JSON object.')
        unknown = sorted(set(layer) - known)
        if unknown:
            raise ConfigurationError(f'Section {name!r} has unknown keys {unknown}.')
        merged.update({key: value for key, value in layer.items() if value is not None})
    validated = validate_config(serializer_class, merged, name.replace('_', ' '))
    # Plain JSON types for the echo.
    return json.loads(json.dumps(validated))


def _run_level(name: str, values: Mapping[str, Any]) -> Dict[str, Any]:
    layer = {}
    if values['seed'] is not None and name in SEEDED_SECTIONS:
        layer['seed'] = values['seed']
    if values['k'] is not None and name in K_SECTIONS:
        layer['k'] = values['k']
    return layer


def resolve_config(
    command: str,
    options: Mapping[str, Any],
    section_flags: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> RunConfig:
    """
    Merge settings, the ``--config`` file named in ``options`` and the flags.
    """
    file_data = read_config_file(options.get('config'))
    section_flags = section_flags or {}

    file_run = {'seed': file_data.get('seed'), 'k': file_data.get('k')}
    flag_run = {'seed': options.get('seed'), 'k': options.get('k')}
    seed = flag_run['seed'] if flag_run['seed'] is not None else file_run['seed']
    k = flag_run['k'] if flag_run['k'] is not None else file_run['k']

    paths: Dict[str, Optional[str]] = {name: None for name in PATHS}
    file_paths = file_data.get('paths') or {}
    if not isinstance(file_paths, Mapping) or set(file_paths) - set(PATHS) or not all(
        value is None or isinstance(value, str) for value in file_paths.values()
    ):
        raise ConfigurationError(f'"paths" may only name {list(PATHS)}.')
    paths.update({name: value for name, value in file_paths.items() if value is not None})
    paths.update({name: str(options[name]) for name in PATHS if options.get(name) is not None})

    # A section value in the file beats the file's run-level value; any flag beats both.
    sections: Dict[str, Dict[str, Any]] = {}
    for name, (attribute, _) in SECTIONS.items():
        sections[name] = _merge_section(
            name, copy.deepcopy(getattr(settings, attribute)),
            _run_level(name, file_run), file_data.get(name),
            _run_level(name, flag_run), section_flags.get(name),
        )

    if seed is None:
        seed = settings.DEFAULT_SEED
    if k is None:
        k = sections['fusion']['k']
    if not isinstance(seed, int) or seed < 0 or not isinstance(k, int) or k < 1:
        raise ConfigurationError(f'seed must be a non-negative integer and k positive, got {seed!r} and {k!r}.')
    run = RunConfig(command=command, seed=seed, k=k, paths=paths, sections=sections)
    logger.debug(f"Resolved {command} configuration with seed={seed} k={k}")
    return run
