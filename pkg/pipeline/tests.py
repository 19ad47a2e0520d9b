import json

import numpy as np
import pandas as pd
import pytest
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError

from forecasting.serializers import read_checkpoint, read_prediction_jsonl
from scene.overlay import read_ppm
from sceneintent.exceptions import ConfigurationError
from sceneintent.utils import sha256_file
from trajectories.serializers import load_dataset, read_manifest

from . import config as run_config
from .config import SECTIONS, RunConfig, resolve_config
from .management.commands.predict import Command as PredictCommand


def write_config(directory, base, **sections):
    data = json.loads(json.dumps(base))
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    path = directory / 'run.json'
    path.write_text(json.dumps(data), encoding='utf-8')
    return path


def tree(directory):
    return {
        str(path.relative_to(directory)): path.read_bytes()
        for path in sorted(directory.rglob('*'))
        if path.is_file()
    }


def first_test_scene(dataset):
    return load_dataset(dataset).test[0].scene_id


class TestResolveConfig:
    def test_defaults_come_from_settings(self):
        run = resolve_config('train', {})
        assert run.seed == settings.DEFAULT_SEED
        assert run.k == settings.FUSION['k']
        assert set(run.sections) == set(SECTIONS)
        assert run.sections['training']['epochs'] == settings.TRAINING['epochs']
        assert run.paths == {'out': None, 'dataset': None, 'checkpoint': None}

    def test_file_beats_settings_and_flags_beat_file(self, tmp_path, tiny_config_data):
        path = write_config(tmp_path, tiny_config_data, training={'epochs': 5})
        run = resolve_config('train', {'config': str(path)})
        assert run.seed == 11
        assert run.sections['training']['epochs'] == 5
        assert run.sections['camera_mount']['width'] == 32

        run = resolve_config('train', {'config': str(path), 'seed': 3, 'k': 4}, {'training': {'epochs': 9}})
        assert run.seed == 3
        assert run.sections['training']['epochs'] == 9
        assert run.sections['fusion']['k'] == run.sections['evaluation']['k'] == 4

    def test_seed_reaches_every_seeded_section(self):
        run = resolve_config('evaluate', {'seed': 42})
        assert run.sections['training']['seed'] == 42
        assert run.sections['fusion']['seed'] == 42
        assert run.sections['evaluation']['seed'] == 42

    def test_section_value_in_file_beats_its_run_level_value(self, tmp_path, tiny_config_data):
        path = write_config(tmp_path, tiny_config_data, training={'seed': 2})
        run = resolve_config('train', {'config': str(path)})
        assert run.seed == 11
        assert run.sections['training']['seed'] == 2
        assert run.sections['fusion']['seed'] == 11

    def test_echo_reproduces_the_run(self, tmp_path, tiny_config_data):
        path = write_config(tmp_path, tiny_config_data, training={'seed': 2})
        run = resolve_config('train', {'config': str(path), 'k': 6, 'out': str(tmp_path)})
        echo = tmp_path / 'echo.json'
        echo.write_text(run.echo(), encoding='utf-8')
        assert resolve_config('train', {'config': str(echo)}) == run

    def test_written_config_has_no_paths(self, tmp_path):
        run = resolve_config('train', {'out': str(tmp_path)})
        data = json.loads(run.write(tmp_path).read_text())
        assert 'paths' not in data
        assert data['seed'] == run.seed

    def test_settings_overrides(self):
        run = resolve_config('predict', {'k': 3})
        overrides = run.settings_overrides()
        assert overrides['FUSION']['k'] == 3
        assert set(overrides) == {attribute for attribute, _ in SECTIONS.values()}

    @pytest.mark.parametrize('content', [
        'not json',
        '[1, 2]',
        '{"colour": 1}',
        '{"fusion": {"kk": 3}}',
        '{"fusion": {"k": 50, "max_proposals": 10}}',
        '{"paths": {"home": "/tmp"}}',
        '{"training": {"epochs": -1}}',
        '{"seed": -4}',
    ])
    def test_invalid_config_files(self, tmp_path, content):
        path = tmp_path / 'bad.json'
        path.write_text(content)
        with pytest.raises(ConfigurationError):
            resolve_config('train', {'config': str(path)})

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            resolve_config('train', {'config': str(tmp_path / 'absent.json')})

    def test_required_path(self):
        run = RunConfig(command='train', seed=0, k=1, paths={'out': None})
        with pytest.raises(ConfigurationError, match='--out'):
            run.path('out')
        assert run.path('out', required=False) is None

    def test_output_path_taken_by_a_file(self, tmp_path):
        taken = tmp_path / 'taken'
        taken.write_text('x', encoding='utf-8')
        run = RunConfig(command='gen_dataset', seed=0, k=1, paths={'out': str(taken)})
        with pytest.raises(ConfigurationError, match='Cannot create output directory'):
            run.output_directory()

    def test_unwritable_output_directory(self, tmp_path, monkeypatch):
        monkeypatch.setattr(run_config, 'writable', lambda directory: False)
        run = RunConfig(command='gen_dataset', seed=0, k=1, paths={'out': str(tmp_path / 'out')})
        with pytest.raises(ConfigurationError, match='not writable'):
            run.output_directory()


class TestGenDataset:
    def test_counts_match_manifest(self, capsys, tmp_path, tiny_config):
        call_command('gen_dataset', config=str(tiny_config), out=str(tmp_path))
        printed = capsys.readouterr().out
        frame = read_manifest(tmp_path / 'manifest.jsonl')
        counts = frame['split'].value_counts().to_dict()
        for split in ('train', 'val', 'test'):
            assert f'{split}: {counts[split]} instances' in printed
        assert frame['log_id'].nunique() == 5
        assert len(list((tmp_path / 'logs').glob('*.csv'))) == 5
        assert len(list((tmp_path / 'worlds').glob('*.txt'))) == 1

    def test_scenes_for_the_test_split_only(self, tiny_dataset):
        frame = read_manifest(tiny_dataset / 'manifest.jsonl')
        scenes = {path.name.split('.')[0] for path in (tiny_dataset / 'scenes').iterdir()}
        assert scenes == set(frame.loc[frame['split'] == 'test', 'scene_id'])

    def test_same_seed_same_tree(self, tiny_dataset, tmp_path, tiny_config):
        call_command('gen_dataset', config=str(tiny_config), out=str(tmp_path))
        assert tree(tmp_path) == tree(tiny_dataset)

    def test_other_seed_other_logs(self, tiny_dataset, tmp_path, tiny_config):
        call_command('gen_dataset', config=str(tiny_config), out=str(tmp_path), seed=12)
        assert tree(tmp_path / 'logs') != tree(tiny_dataset / 'logs')

    def test_echoes_the_resolved_config(self, tmp_path, tiny_config, capsys):
        call_command('gen_dataset', config=str(tiny_config), out=str(tmp_path))
        printed = capsys.readouterr().out
        assert '"world_generation": {' in printed
        written = json.loads((tmp_path / 'config.json').read_text())
        assert written['seed'] == 11
        assert written['dataset']['ratios'] == [2.0, 1.0, 1.0]

    def test_too_few_logs(self, tmp_path, tiny_config_data):
        worlds = [{'layout': 'scatter', 'runs': 2}]
        path = write_config(tmp_path, tiny_config_data, dataset={'worlds': worlds})
        with pytest.raises(CommandError) as excinfo:
            call_command('gen_dataset', config=str(path), out=str(tmp_path / 'out'))
        assert excinfo.value.returncode == 2

    def test_unwritable_output_exits_with_usage_code(self, tmp_path, tiny_config, monkeypatch):
        monkeypatch.setattr(run_config, 'writable', lambda directory: False)
        with pytest.raises(CommandError, match='not writable') as excinfo:
            call_command('gen_dataset', config=str(tiny_config), out=str(tmp_path / 'out'))
        assert excinfo.value.returncode == 1
        assert not list((tmp_path / 'out').iterdir())


class TestTrain:
    def test_checkpoint_and_metrics(self, tiny_checkpoint, tiny_dataset):
        checkpoint = read_checkpoint(tiny_checkpoint)
        assert checkpoint.state.epoch == 2
        assert checkpoint.manifest_sha256 == sha256_file(tiny_dataset / 'manifest.jsonl')
        assert (tiny_checkpoint.parent / 'checkpoint.bin.json').is_file()
        assert checkpoint.state.model.architecture.embed_dim == 4
        metrics = pd.read_csv(tiny_checkpoint.parent / 'metrics.csv')
        assert list(metrics.columns) == ['epoch', 'd_loss', 'g_loss', 'val_min_k_ade']
        assert metrics['epoch'].tolist() == [1, 2]
        assert np.isfinite(metrics[['d_loss', 'g_loss', 'val_min_k_ade']].to_numpy()).all()

    def test_resume_matches_uninterrupted_run(self, tiny_checkpoint, tiny_dataset, tiny_config, tmp_path):
        first, second = tmp_path / 'first', tmp_path / 'second'
        call_command('train', config=str(tiny_config), dataset=str(tiny_dataset), out=str(first), epochs=1)
        call_command(
            'train', config=str(tiny_config), dataset=str(tiny_dataset), out=str(second),
            checkpoint=str(first / 'checkpoint.bin'), resume=True,
        )
        full = read_checkpoint(tiny_checkpoint).state
        resumed = read_checkpoint(second / 'checkpoint.bin').state
        assert resumed.epoch == 2
        for name in full.model.params:
            np.testing.assert_array_equal(resumed.model.params[name], full.model.params[name])
        assert resumed.history == full.history
        assert len(pd.read_csv(second / 'metrics.csv')) == 2

    def test_corrupt_checkpoint(self, tiny_dataset, tiny_config, tmp_path):
        broken = tmp_path / 'broken.bin'
        broken.write_bytes(b'not a checkpoint')
        with pytest.raises(CommandError, match='broken.bin') as excinfo:
            call_command(
                'train', config=str(tiny_config), dataset=str(tiny_dataset), out=str(tmp_path / 'out'),
                checkpoint=str(broken), resume=True,
            )
        assert excinfo.value.returncode == 2

    def test_missing_dataset(self, tiny_config, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            call_command('train', config=str(tiny_config), dataset=str(tmp_path), out=str(tmp_path / 'out'))
        assert excinfo.value.returncode == 2

    def test_dataset_flag_is_required(self, tiny_config, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            call_command('train', config=str(tiny_config), out=str(tmp_path))
        assert excinfo.value.returncode == 1


class TestPredict:
    def test_twenty_trajectories(self, tiny_dataset, tiny_checkpoint, tiny_config, tmp_path):
        scene_id = first_test_scene(tiny_dataset)
        call_command(
            'predict', config=str(tiny_config), dataset=str(tiny_dataset),
            checkpoint=str(tiny_checkpoint), out=str(tmp_path), instance=scene_id, k=20,
        )
        records = read_prediction_jsonl(tmp_path / 'predictions.jsonl')
        assert len(records) == 20
        assert all(record['scene_id'] == scene_id for record in records)
        assert all(len(record['waypoints']) == 8 for record in records)
        assert read_ppm(tmp_path / 'overlay.ppm').shape == (24, 32, 3)
        assert (tmp_path / 'world.ppm').exists()

    def test_fully_traversable_scene_accepts_everything(
        self, tiny_dataset, tiny_checkpoint, tiny_config_data, tmp_path, capsys
    ):
        config = write_config(tmp_path, tiny_config_data, scene={'footprint_radius': 1000.0})
        call_command(
            'predict', config=str(config), dataset=str(tiny_dataset),
            checkpoint=str(tiny_checkpoint), out=str(tmp_path / 'out'), instance=first_test_scene(tiny_dataset),
        )
        records = read_prediction_jsonl(tmp_path / 'out' / 'predictions.jsonl')
        assert len(records) == 5
        assert all(record['acceptance_rate'] == 1.0 for record in records)
        assert not any(record['fallback_used'] for record in records)
        assert 'acceptance_rate=1.0000 fallback=no' in capsys.readouterr().out

    def test_same_seed_same_predictions(self, tiny_dataset, tiny_checkpoint, tiny_config, tmp_path):
        scene_id = first_test_scene(tiny_dataset)
        for name in ('a', 'b'):
            call_command(
                'predict', config=str(tiny_config), dataset=str(tiny_dataset), checkpoint=str(tiny_checkpoint),
                out=str(tmp_path / name), instance=scene_id, background='traversability',
            )
        assert tree(tmp_path / 'a') == tree(tmp_path / 'b')

    def test_missing_instance(self, tiny_dataset, tiny_checkpoint, tiny_config, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            call_command(
                'predict', config=str(tiny_config), dataset=str(tiny_dataset),
                checkpoint=str(tiny_checkpoint), out=str(tmp_path), instance='no-such-scene',
            )
        assert excinfo.value.returncode == 2

    def test_instance_flag_is_required(self, tiny_dataset):
        with pytest.raises(CommandError) as excinfo:
            call_command('predict', dataset=str(tiny_dataset))
        assert excinfo.value.returncode == 1

    def test_usage_error_exits_with_one(self):
        with pytest.raises(SystemExit) as excinfo:
            PredictCommand().run_from_argv(['manage.py', 'predict', '--no-such-flag'])
        assert excinfo.value.code == 1


class TestEvaluate:
    def evaluate_into(self, tiny_config, tiny_dataset, tiny_checkpoint, out):
        call_command(
            'evaluate', config=str(tiny_config), dataset=str(tiny_dataset),
            checkpoint=str(tiny_checkpoint), out=str(out),
        )
        return tree(out)

    def test_reports(self, tiny_dataset, tiny_checkpoint, tiny_config, tmp_path):
        self.evaluate_into(tiny_config, tiny_dataset, tiny_checkpoint, tmp_path)
        table = pd.read_csv(tmp_path / 'table.csv')
        assert table['selection'].tolist() == ['random', 'mean', 'min_k']
        errors = [column for column in table.columns if column.endswith(('_no_scene', '_fused'))]
        improvements = [column for column in table.columns if column.endswith('_improvement_pct')]
        assert table[errors].size == 12
        assert table[improvements].size == 6
        curve = pd.read_csv(tmp_path / 'curve.csv')
        assert curve['k'].tolist() == [1, 2, 3, 4, 5]
        report = json.loads((tmp_path / 'report.json').read_text())
        assert report['instance_count'] == 3
        assert report['k'] == 5

    def test_same_seed_same_reports(self, tiny_dataset, tiny_checkpoint, tiny_config, tmp_path):
        first = self.evaluate_into(tiny_config, tiny_dataset, tiny_checkpoint, tmp_path / 'a')
        second = self.evaluate_into(tiny_config, tiny_dataset, tiny_checkpoint, tmp_path / 'b')
        assert first == second

    def test_flags(self, tiny_dataset, tiny_checkpoint, tiny_config, tmp_path):
        call_command(
            'evaluate', config=str(tiny_config), dataset=str(tiny_dataset), checkpoint=str(tiny_checkpoint),
            out=str(tmp_path), k_max=3, limit=2,
        )
        assert len(pd.read_csv(tmp_path / 'curve.csv')) == 3
        assert json.loads((tmp_path / 'report.json').read_text())['instance_count'] == 2

    def test_bad_config(self, tiny_dataset, tiny_checkpoint, tiny_config_data, tmp_path):
        config = write_config(tmp_path, tiny_config_data, evaluation={'k_maximum': 3})
        with pytest.raises(CommandError) as excinfo:
            call_command(
                'evaluate', config=str(config), dataset=str(tiny_dataset),
                checkpoint=str(tiny_checkpoint), out=str(tmp_path / 'out'),
            )
        assert excinfo.value.returncode == 1
