import math
from itertools import combinations

import numpy as np
import pytest

from sceneintent.exceptions import (
    ConfigurationError,
    DataFormatError,
    DegenerateInputError,
    GenerationError,
    InsufficientDataError,
)
from sceneintent.validators import validate_config

from .core import (
    Pose2D,
    RelativeTrajectory,
    Trajectory,
    heading_from_displacements,
    to_absolute,
    to_relative,
    transform_to_local,
    transform_to_world,
)
from .driving import drive_scenarios
from .serializers import (
    DrivingConfigSerializer,
    WorldConfigSerializer,
    load_dataset,
    parse_world,
    read_log,
    read_world,
    render_world,
    write_log,
    write_manifest,
    write_world,
)
from .windows import split_dataset, window_log
from .worlds import World, connected_components, generate_world, world_config


def random_walk(rng: np.random.Generator, length: int) -> Trajectory:
    steps = rng.normal(0.0, 0.5, size=(length - 1, 2))
    origin = rng.uniform(-10, 10, size=(1, 2))
    return Trajectory(np.cumsum(np.vstack([origin, steps]), axis=0))


class TestConversions:
    def test_to_relative_differences_positions(self):
        rel = to_relative(Trajectory.from_points([(0, 0), (1, 0), (1, 1)]))
        np.testing.assert_array_equal(rel.displacements, [[1, 0], [0, 1]])

    def test_constant_trajectory_gives_zero_steps(self):
        rel = to_relative(Trajectory.from_points([(2, 3)] * 5))
        assert len(rel) == 4
        assert not rel.displacements.any()

    def test_to_relative_needs_two_points(self):
        with pytest.raises(DegenerateInputError):
            to_relative(Trajectory.from_points([(1, 1)]))

    def test_to_absolute_accumulates_from_origin(self):
        traj = to_absolute(RelativeTrajectory.from_steps([(1, 0), (0, 1)]), (0, 0))
        np.testing.assert_array_equal(traj.positions, [[1, 0], [1, 1]])

    def test_stationary_steps_stay_at_origin(self):
        traj = to_absolute(RelativeTrajectory(np.zeros((8, 2))), (5, 5))
        np.testing.assert_array_equal(traj.positions, np.full((8, 2), 5.0))

    def test_empty_relative_trajectory_is_rejected(self):
        with pytest.raises(DegenerateInputError):
            RelativeTrajectory(np.zeros((0, 2)))

    def test_round_trip(self, rng):
        for length in (2, 5, 17, 60):
            traj = random_walk(rng, length)
            back = to_absolute(to_relative(traj), traj.positions[0])
            assert np.max(np.abs(back.positions - traj.positions[1:])) < 1e-12

    def test_non_finite_positions_are_rejected(self):
        with pytest.raises(Exception):
            Trajectory.from_points([(0, 0), (math.nan, 1)])

    def test_heading_is_normalized(self):
        assert Pose2D((0, 0), -math.pi).heading == pytest.approx(math.pi)
        assert Pose2D((0, 0), 3 * math.pi / 2).heading == pytest.approx(-math.pi / 2)


class TestTransformToWorld:
    @pytest.mark.parametrize('steps, pose, expected', [
        ([(1, 0)], ((0, 0), math.pi / 2), [(0, 1)]),
        ([(1, 0)], ((3, 4), 0.0), [(4, 4)]),
        ([(1, 0), (1, 0)], ((0, 0), math.pi), [(-1, 0), (-2, 0)]),
    ])
    def test_examples(self, steps, pose, expected):
        traj = transform_to_world(RelativeTrajectory.from_steps(steps), Pose2D(*pose))
        np.testing.assert_allclose(traj.positions, expected, atol=1e-12)

    def test_preserves_pairwise_distances(self, rng):
        rel = RelativeTrajectory(rng.normal(size=(8, 2)))
        local = to_absolute(rel, (0, 0)).positions
        world = transform_to_world(rel, Pose2D((3.0, -7.0), 2.1)).positions
        for i, j in combinations(range(8), 2):
            assert abs(
                np.linalg.norm(local[i] - local[j]) - np.linalg.norm(world[i] - world[j])
            ) < 1e-12

    def test_heading_from_last_moving_step(self):
        steps = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
        assert heading_from_displacements(steps) == pytest.approx(math.pi / 2)
        assert heading_from_displacements(np.zeros((4, 2))) == 0.0

    def test_local_example(self):
        rel = transform_to_local(RelativeTrajectory.from_steps([(0, 1), (-1, 0)]), math.pi / 2)
        np.testing.assert_allclose(rel.displacements, [(1, 0), (0, 1)], atol=1e-12)

    def test_local_inverts_world(self, rng):
        rel = RelativeTrajectory(rng.normal(size=(8, 2)))
        pose = Pose2D((3.0, -7.0), 2.1)
        world = transform_to_world(rel, pose)
        world_steps = to_relative(Trajectory(np.vstack([pose.as_array(), world.positions])))
        back = transform_to_local(world_steps, pose.heading)
        np.testing.assert_allclose(back.displacements, rel.displacements, atol=1e-12)


class TestWorlds:
    def test_zero_density_is_all_traversable(self):
        world = generate_world(3, {'obstacle_density': 0.0})
        assert world.traversable_mask.all()
        assert world.obstacles == ()

    def test_same_seed_same_world(self):
        assert generate_world(11) == generate_world(11)

    def test_density_controls_blocked_fraction(self):
        world = generate_world(5, {'obstacle_density': 0.3, 'extent': [40.0, 40.0]})
        assert 0.2 <= world.blocked_fraction() <= 0.4

    def test_mask_matches_obstacles(self):
        world = generate_world(8, {'layout': 'blocks'})
        centers = [
            world.cell_center(r, c)
            for r in range(0, world.shape[0], 7)
            for c in range(0, world.shape[1], 7)
        ]
        for x, y in centers:
            covered = any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in world.obstacles)
            assert world.is_traversable(np.array([[x, y]]))[0] == (not covered)

    def test_fully_blocked_world_is_rejected(self):
        with pytest.raises(GenerationError):
            World(
                extent=(1.0, 1.0),
                resolution=0.5,
                traversable_mask=np.zeros((2, 2), dtype=bool),
                obstacles=((0.0, 0.0, 1.0, 1.0),),
                seed=0,
            )

    def test_invalid_density_is_a_configuration_error(self):
        with pytest.raises(ConfigurationError):
            generate_world(0, {'obstacle_density': 1.0})

    def test_junction_has_route_anchors(self):
        world = generate_world(0, {'layout': 'junction'})
        assert len(world.starts) == 1 and len(world.goals) == 2
        assert world.is_traversable(np.array(world.starts + world.goals)).all()

    def test_components_are_four_connected(self):
        mask = np.array([
            [1, 1, 0, 0],
            [0, 0, 0, 1],
            [0, 0, 1, 0],
            [1, 0, 1, 1],
        ], dtype=bool)
        expected = [
            [1, 1, 0, 0],
            [0, 0, 0, 2],
            [0, 0, 3, 0],
            [4, 0, 3, 3],
        ]
        assert connected_components(mask).tolist() == expected

    def test_junction_is_one_region(self):
        world = generate_world(0, {'layout': 'junction'})
        assert np.array_equal(world.largest_region(), world.traversable_mask)


class TestDriving:
    def test_straight_driver_in_open_world(self):
        world = generate_world(0, {'obstacle_density': 0.0, 'extent': [80.0, 80.0]})
        runs = drive_scenarios(world, 3, seed=2, config={'policy': 'straight', 'duration': 20.0})
        assert runs
        for traj in runs:
            steps = np.diff(traj.positions, axis=0)
            spacing = np.linalg.norm(steps, axis=1)
            np.testing.assert_allclose(spacing, spacing[0], atol=1e-9)
            cross = steps[1:, 0] * steps[0, 1] - steps[1:, 1] * steps[0, 0]
            assert np.max(np.abs(cross)) < 1e-9
            assert spacing[0] <= 2.0 * traj.dt + 1e-12

    def test_waypoints_stay_on_traversable_cells(self):
        world = generate_world(4, {'obstacle_density': 0.3})
        runs = drive_scenarios(world, 4, seed=9, config={'duration': 60.0})
        assert runs
        for traj in runs:
            assert world.is_traversable(traj.positions).all()
            speeds = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1) / traj.dt
            assert speeds.max() <= 2.0 + 1e-9

    def test_ten_long_runs_give_enough_samples(self, open_world):
        runs = drive_scenarios(open_world, 10, seed=1, config={'duration': 60.0})
        assert sum(len(traj) for traj in runs) >= 1200

    def test_deterministic_given_seed(self, open_world):
        first = drive_scenarios(open_world, 2, seed=5, config={'duration': 20.0})
        second = drive_scenarios(open_world, 2, seed=5, config={'duration': 20.0})
        assert first == second

    def test_junction_runs_turn_both_ways(self):
        world = generate_world(0, {'layout': 'junction'})
        runs = drive_scenarios(world, 16, seed=3)
        endpoints = {np.sign(traj.positions[-1, 0] - world.extent[0] / 2) for traj in runs}
        assert endpoints == {-1.0, 1.0}


class TestWindows:
    @pytest.mark.parametrize('length, expected', [(17, 1), (16, 0), (100, 84), (5, 0)])
    def test_window_count(self, rng, length, expected):
        assert len(window_log(random_walk(rng, length))) == expected

    def test_window_count_formula(self, rng):
        for length in rng.integers(17, 200, size=20):
            assert len(window_log(random_walk(rng, int(length)))) == length - 16

    def test_windows_reconstruct_the_log(self, rng):
        traj = random_walk(rng, 30)
        for instance in window_log(traj, 'log-a'):
            segment = traj.positions[instance.start:instance.start + 17]
            rebuilt = np.vstack([instance.past_world().positions, instance.future_world().positions])
            np.testing.assert_allclose(rebuilt, segment, atol=1e-9)
            assert instance.scene_id == f'log-a-{instance.start:05d}'

    def test_past_is_in_agent_frame(self):
        traj = Trajectory(np.array([[0.0, float(i)] for i in range(17)]))
        instance = window_log(traj)[0]
        np.testing.assert_allclose(instance.past.displacements, [[1.0, 0.0]] * 8, atol=1e-12)
        assert instance.agent_pose.heading == pytest.approx(math.pi / 2)

    def test_wrong_dt_is_rejected(self, rng):
        with pytest.raises(Exception):
            window_log(Trajectory(random_walk(rng, 20).positions, dt=0.1))


class TestSplit:
    def _logs(self, rng, count):
        return {f'log{i}': window_log(random_walk(rng, 20), f'log{i}') for i in range(count)}

    def test_six_logs_split_four_one_one(self, rng):
        split = split_dataset(self._logs(rng, 6), (4, 1, 1), seed=3)
        values = list(split.assignment.values())
        assert (values.count('train'), values.count('val'), values.count('test')) == (4, 1, 1)

    def test_same_seed_same_assignment(self, rng):
        logs = self._logs(rng, 8)
        assert split_dataset(logs, seed=4).assignment == split_dataset(logs, seed=4).assignment

    def test_partition(self, rng):
        logs = self._logs(rng, 7)
        split = split_dataset(logs, seed=1)
        ids = [{i.scene_id for i in split.get(name)} for name in ('train', 'val', 'test')]
        for a, b in combinations(ids, 2):
            assert not a & b
        assert set().union(*ids) == {i.scene_id for group in logs.values() for i in group}
        for name in ('train', 'val', 'test'):
            assert {split.assignment[i.log_id] for i in split.get(name)} <= {name}

    def test_needs_three_logs(self, rng):
        with pytest.raises(InsufficientDataError):
            split_dataset(self._logs(rng, 2))


class TestSerializers:
    def test_log_round_trip(self, tmp_path, rng):
        traj = random_walk(rng, 25)
        write_log(tmp_path / 'a.csv', traj)
        back = read_log(tmp_path / 'a.csv')
        assert back.dt == traj.dt
        np.testing.assert_allclose(back.positions, traj.positions, rtol=1e-8, atol=1e-8)
        assert (tmp_path / 'a.csv').read_text().startswith('t,x,y\n')

    def test_bad_log_header(self, tmp_path):
        (tmp_path / 'bad.csv').write_text('a,b\n1,2\n')
        with pytest.raises(DataFormatError, match='bad.csv'):
            read_log(tmp_path / 'bad.csv')

    @pytest.mark.parametrize('layout', ['scatter', 'blocks', 'junction'])
    def test_world_file_round_trip(self, tmp_path, layout):
        world = generate_world(6, {'layout': layout})
        write_world(tmp_path / 'w.txt', world)
        back = read_world(tmp_path / 'w.txt')
        assert back == world
        assert render_world(back) == (tmp_path / 'w.txt').read_text()

    def test_corrupt_world_file(self):
        with pytest.raises(DataFormatError):
            parse_world('extent = 1.0 1.0\ngrid\n.x\n')

    def test_manifest_and_reload(self, tmp_path, rng):
        (tmp_path / 'logs').mkdir()
        logs = {}
        for i in range(4):
            traj = random_walk(rng, 19 + i)
            write_log(tmp_path / 'logs' / f'run{i}.csv', traj)
            logs[f'run{i}'] = window_log(read_log(tmp_path / 'logs' / f'run{i}.csv'), f'run{i}')
        split = split_dataset(logs, seed=2)
        lines = write_manifest(tmp_path / 'manifest.jsonl', split)
        assert lines == sum(len(v) for v in logs.values())
        assert len((tmp_path / 'manifest.jsonl').read_text().splitlines()) == lines
        loaded = load_dataset(tmp_path)
        assert loaded.counts() == split.counts()
        assert loaded.assignment == split.assignment
        assert loaded.test[0].past == split.test[0].past
        assert loaded.split_seed == 0

        (tmp_path / 'config.json').write_text('{"seed": 2}', encoding='utf-8')
        assert load_dataset(tmp_path).split_seed == 2
        (tmp_path / 'config.json').write_text('{"seed": ', encoding='utf-8')
        with pytest.raises(DataFormatError, match='config.json'):
            load_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_dataset(tmp_path)

    def test_config_serializers(self):
        config = world_config()
        assert validate_config(WorldConfigSerializer, config, 'world')['layout'] == 'scatter'
        with pytest.raises(ConfigurationError):
            validate_config(WorldConfigSerializer, {**config, 'obstacle_density': 1.2}, 'world')
        with pytest.raises(ConfigurationError):
            validate_config(
                DrivingConfigSerializer,
                {'policy': 'route', 'duration': 10, 'min_speed': 1.0, 'max_speed': 3.0,
                 'max_turn_rate': 1.0, 'heading_noise': 0.05, 'lookahead': 1.5,
                 'stop_probability': 0.0, 'stop_steps': [1, 2], 'goal_tolerance': 1.0},
                'driving',
            )
