import math

import numpy as np
import pytest
from django.core.management import call_command

from forecasting.fusion import raw_prediction, select
from scene.catalog import SceneCatalog
from sceneintent.exceptions import DataFormatError, InsufficientDataError, NumericalError, ShapeMismatchError
from trajectories.core import Pose2D, RelativeTrajectory, Trajectory, rotation_matrix
from trajectories.windows import TrainInstance

from .harness import (
    BASELINE,
    FUSED,
    InstanceResult,
    MetricReport,
    improvement,
    instance_seed,
    min_k_curve,
    table_report,
)
from .metrics import ade, displacement_errors, fde
from .reports import (
    CURVE_COLUMNS,
    parse_curve_csv,
    parse_report_json,
    read_report,
    render_curve_csv,
    render_report_json,
    render_table_csv,
    write_reports,
)


def brute_ade(pred, truth):
    total = 0.0
    for (px, py), (tx, ty) in zip(pred, truth):
        total += math.sqrt((px - tx) ** 2 + (py - ty) ** 2)
    return total / len(pred)


def brute_fde(pred, truth):
    (px, py), (tx, ty) = pred[-1], truth[-1]
    return math.sqrt((px - tx) ** 2 + (py - ty) ** 2)


def scene_instances(count=3):
    instances = []
    for i in range(count):
        heading = 0.3 * (i - 1)
        steps = np.tile([[0.6, 0.0]], (8, 1))
        instances.append(TrainInstance(
            past=RelativeTrajectory(steps),
            future=RelativeTrajectory(steps + [0.0, 0.05 * i]),
            agent_pose=Pose2D((6.0, 8.0 + 2.0 * i), heading),
            scene_id=f'log-{i:05d}',
            log_id='log',
            start=i,
            world_id='w',
        ))
    return instances


def cell_table(ade_base, ade_fused, fde_base=None, fde_fused=None):
    fde_base = ade_base if fde_base is None else fde_base
    fde_fused = ade_fused if fde_fused is None else fde_fused
    return {
        method: {
            selection: {'ade': a, 'fde': f}
            for selection in ('random', 'mean', 'min_k')
        }
        for method, a, f in ((BASELINE, ade_base, fde_base), (FUSED, ade_fused, fde_fused))
    }


def handmade_report():
    return MetricReport(k=20, seed=3, max_proposals=2000, instances=(
        InstanceResult('a', 1, cell_table(1.0, 0.8, 2.0, 1.5), 0.5, False, 0.25),
        InstanceResult('b', 2, cell_table(3.0, 2.8, 4.0, 4.0), 0.25, True, 0.75),
    ))


class TestDisplacementErrors:
    def test_identical(self):
        traj = Trajectory(np.arange(16.0).reshape(8, 2))
        assert ade(traj, traj) == 0.0
        assert fde(traj, traj) == 0.0

    def test_constant_offset(self):
        truth = Trajectory(np.arange(16.0).reshape(8, 2))
        pred = Trajectory(truth.positions + [3.0, 4.0])
        assert ade(pred, truth) == pytest.approx(5.0, abs=1e-12)

    def test_endpoint_offset(self):
        truth = Trajectory(np.zeros((8, 2)))
        pred = np.zeros((8, 2))
        pred[-1] = [0.0, 2.0]
        assert fde(Trajectory(pred), truth) == 2.0

    def test_same_endpoint_different_interior(self, rng):
        truth = rng.normal(size=(8, 2))
        pred = rng.normal(size=(8, 2))
        pred[-1] = truth[-1]
        assert fde(Trajectory(pred), Trajectory(truth)) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ade(Trajectory(np.zeros((8, 2))), Trajectory(np.zeros((7, 2))))
        with pytest.raises(ShapeMismatchError):
            fde(Trajectory(np.zeros((8, 2))), Trajectory(np.zeros((9, 2))))

    def test_matches_brute_force(self, rng):
        for _ in range(1000):
            pred = rng.normal(0.0, 5.0, size=(8, 2))
            truth = rng.normal(0.0, 5.0, size=(8, 2))
            assert abs(ade(Trajectory(pred), Trajectory(truth)) - brute_ade(pred, truth)) < 1e-12
            assert abs(fde(Trajectory(pred), Trajectory(truth)) - brute_fde(pred, truth)) < 1e-12

    def test_final_error_is_part_of_the_sum(self, rng):
        for _ in range(200):
            pred = Trajectory(rng.normal(size=(8, 2)))
            truth = Trajectory(rng.normal(size=(8, 2)))
            assert 8 * ade(pred, truth) >= fde(pred, truth) >= 0.0

    def test_rigid_motion_invariance(self, rng):
        for _ in range(100):
            pred = rng.normal(0.0, 3.0, size=(8, 2))
            truth = rng.normal(0.0, 3.0, size=(8, 2))
            rotation = rotation_matrix(rng.uniform(-math.pi, math.pi))
            shift = rng.uniform(-100.0, 100.0, size=2)
            moved_pred = Trajectory(pred @ rotation.T + shift)
            moved_truth = Trajectory(truth @ rotation.T + shift)
            assert ade(moved_pred, moved_truth) == pytest.approx(ade(Trajectory(pred), Trajectory(truth)), abs=1e-9)
            assert fde(moved_pred, moved_truth) == pytest.approx(fde(Trajectory(pred), Trajectory(truth)), abs=1e-9)

    def test_batched_errors_match_single_pairs(self, rng):
        predictions = rng.normal(size=(4, 5, 8, 2))
        truth = rng.normal(size=(8, 2))
        ade_values, fde_values = displacement_errors(predictions, truth)
        assert ade_values.shape == fde_values.shape == (4, 5)
        assert ade_values[2, 3] == pytest.approx(brute_ade(predictions[2, 3], truth), abs=1e-12)
        assert fde_values[1, 4] == pytest.approx(brute_fde(predictions[1, 4], truth), abs=1e-12)


class TestMetricReport:
    def test_improvement(self):
        assert improvement(0.5406, 0.5079) == pytest.approx(6.0489, abs=1e-3)
        assert improvement(0.0, 0.0) == 0.0
        assert improvement(2.0, 3.0) == -50.0

    def test_twelve_cells_and_six_improvements(self):
        report = handmade_report()
        cells = list(report.cells())
        assert len(cells) == 12
        assert len({(m, s, k) for m, s, k, _ in cells}) == 12
        improvements = report.improvements()
        assert sum(len(row) for row in improvements.values()) == 6
        assert report.mean(BASELINE, 'mean', 'ade') == 2.0
        assert improvements['min_k']['ade'] == pytest.approx(10.0)
        assert improvements['random']['fde'] == pytest.approx(25.0 / 3.0)

    def test_aggregate_statistics(self):
        report = handmade_report()
        assert report.baseline_offroad_fraction == 0.5
        assert report.mean_acceptance_rate == 0.375
        assert report.fallback_count == 1

    def test_json_round_trip(self, tmp_path):
        report = handmade_report()
        assert parse_report_json(render_report_json(report)) == report
        path = tmp_path / 'report.json'
        path.write_text(render_report_json(report))
        assert read_report(path) == report

    def test_invalid_json(self):
        with pytest.raises(DataFormatError):
            parse_report_json('{"k": 1}')

    def test_non_finite_cell(self):
        report = MetricReport(k=1, seed=0, max_proposals=1, instances=(
            InstanceResult('a', 0, cell_table(float('nan'), 1.0), 1.0, False, 0.0),
        ))
        with pytest.raises(NumericalError):
            report.check_finite()

    def test_table_csv_layout(self):
        lines = render_table_csv(handmade_report()).splitlines()
        assert lines[0] == (
            'selection,ade_no_scene,ade_fused,ade_improvement_pct,'
            'fde_no_scene,fde_fused,fde_improvement_pct'
        )
        assert [line.split(',')[0] for line in lines[1:]] == ['random', 'mean', 'min_k']
        assert lines[3].split(',')[1:4] == ['2.000000', '1.800000', '10.000000']


class TestHarness:
    @pytest.fixture
    def catalog(self, open_world):
        return SceneCatalog({'w': open_world})

    def test_instance_seeds_are_distinct_and_stable(self):
        seeds = [instance_seed(7, i) for i in range(50)]
        assert len(set(seeds)) == 50
        assert seeds == [instance_seed(7, i) for i in range(50)]

    def test_table_report(self, small_model, catalog):
        instances = scene_instances()
        report = table_report(small_model, instances, catalog, k=5, seed=2, max_proposals=100)
        assert len(report.instances) == 3
        assert all(value >= 0 for *_, value in report.cells())
        assert 0.0 <= report.baseline_offroad_fraction <= 1.0

        first = instances[0]
        baseline = raw_prediction(small_model, first.past, first.agent_pose, 5, instance_seed(2, 0))
        drawn = select(baseline, 'random', rng_seed=instance_seed(2, 0))
        expected = ade(drawn, first.future_world())
        assert report.instances[0].errors[BASELINE]['random']['ade'] == expected
        for method in (BASELINE, FUSED):
            errors = report.instances[0].errors[method]
            assert errors['min_k']['ade'] <= errors['random']['ade']

    def test_table_report_is_deterministic(self, small_model, catalog):
        a = table_report(small_model, scene_instances(), catalog, k=4, seed=9, max_proposals=80)
        b = table_report(small_model, scene_instances(), catalog, k=4, seed=9, max_proposals=80)
        assert render_report_json(a) == render_report_json(b)
        assert render_table_csv(a) == render_table_csv(b)

    def test_curve_is_monotone_and_starts_at_random(self, small_model, catalog):
        instances = scene_instances()
        curve = min_k_curve(small_model, instances, catalog, k_max=6, seed=4, max_proposals=120)
        report = table_report(small_model, instances, catalog, k=6, seed=4, max_proposals=120)
        assert curve.ks == (1, 2, 3, 4, 5, 6)
        for series in (curve.ade_baseline, curve.ade_fused, curve.fde_baseline, curve.fde_fused):
            assert all(later <= earlier for earlier, later in zip(series, series[1:]))
        assert curve.ade_baseline[0] == pytest.approx(report.mean(BASELINE, 'random', 'ade'), rel=1e-12)
        assert curve.fde_fused[0] == pytest.approx(report.mean(FUSED, 'random', 'fde'), rel=1e-9)
        assert curve.ade_baseline[-1] == pytest.approx(report.mean(BASELINE, 'min_k', 'ade'), rel=1e-12)

    def test_curve_csv(self, small_model, catalog, tmp_path):
        curve = min_k_curve(small_model, scene_instances(2), catalog, k_max=4, seed=0, max_proposals=40)
        frame = parse_curve_csv(render_curve_csv(curve))
        assert list(frame.columns) == CURVE_COLUMNS
        assert frame['k'].tolist() == [1, 2, 3, 4]

        report = table_report(small_model, scene_instances(2), catalog, k=4, seed=0, max_proposals=40)
        write_reports(tmp_path, report, curve)
        assert {p.name for p in tmp_path.iterdir()} == {'table.csv', 'report.json', 'curve.csv'}

    def test_no_instances(self, small_model, catalog):
        with pytest.raises(InsufficientDataError):
            table_report(small_model, [], catalog)
        with pytest.raises(InsufficientDataError):
            min_k_curve(small_model, [], catalog)


@pytest.mark.slow
class TestTrainedComparison:
    @pytest.fixture(scope='class')
    def evaluated(self, trained_run, tmp_path_factory):
        dataset, checkpoint = trained_run
        out = tmp_path_factory.mktemp('evaluation')
        call_command('evaluate', dataset=str(dataset), checkpoint=str(checkpoint), out=str(out))
        return read_report(out / 'report.json'), parse_curve_csv((out / 'curve.csv').read_text())

    def test_fused_beats_baseline_in_every_cell(self, evaluated):
        report, _ = evaluated
        if report.baseline_offroad_fraction < 0.3:
            pytest.skip('baseline rarely leaves the road on this test split')
        gains = [gain for row in report.improvements().values() for gain in row.values()]
        assert len(gains) == 6
        assert all(gain > 0 for gain in gains)
        assert sum(gain >= 3.0 for gain in gains) >= 4

    def test_fused_curve_never_above_baseline(self, evaluated):
        _, curve = evaluated
        assert curve['k'].tolist() == list(range(1, 21))
        assert (curve['ade_fused'] <= curve['ade_baseline'] + 1e-12).all()
        assert (curve['fde_fused'] <= curve['fde_baseline'] + 1e-12).all()
