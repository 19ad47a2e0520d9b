import math

import numpy as np
import pytest

from sceneintent.exceptions import DataError, DataFormatError, MissingInstanceError
from sceneintent.validators import validate_config
from trajectories.core import Pose2D, RelativeTrajectory, Trajectory
from trajectories.windows import TrainInstance
from trajectories.worlds import generate_world

from .camera import (
    CameraModel,
    CameraMount,
    back_project,
    camera_for_pose,
    camera_rotation,
    project,
    read_camera,
    write_camera,
)
from .catalog import SceneCatalog, render_scene, write_scene
from .overlay import (
    RED,
    STYLES,
    Style,
    prediction_layers,
    read_ppm,
    render_overlay,
    render_segmentation,
    render_traversability,
    render_world,
    write_ppm,
)
from .scoring import FootprintDisk, SceneScorer, trajectory_prob, waypoint_prob
from .segmentation import (
    SegMap,
    decode_segmap,
    encode_segmap,
    one_hot_segmap,
    read_segmap,
    render_synthetic_segmap,
    write_segmap,
)
from .serializers import CameraMountSerializer, SceneConfigSerializer

NAMES = ('road', 'building')
FAR_FOOT = FootprintDisk((-100.0, -100.0), 0.5)


def small_camera(height=1.0, pitch=0.4):
    K = np.array([[40.0, 0.0, 32.0], [0.0, 40.0, 24.0], [0.0, 0.0, 1.0]])
    return CameraModel(K, camera_rotation(0.0, pitch), np.array([0.0, 0.0, height]), 64, 48)


def uniform_seg(cam, road):
    probs = np.zeros((cam.height, cam.width, 2), dtype=np.float32)
    probs[..., 0] = road
    probs[..., 1] = 1.0 - road
    return SegMap(probs, NAMES, (0,))


def ground_points_in_view(cam, rng, n):
    pixels = np.column_stack([
        rng.uniform(1, cam.width - 1, n),
        rng.uniform(cam.K[1, 2] + 2, cam.height - 1, n),
    ])
    ground, hit = cam.back_project_many(pixels)
    return ground[hit]


def make_instance(position=(5.0, 10.0), heading=0.0, world_id='w', scene_id='log-00000'):
    steps = np.tile([[0.5, 0.0]], (8, 1))
    return TrainInstance(
        past=RelativeTrajectory(steps),
        future=RelativeTrajectory(steps),
        agent_pose=Pose2D(position, heading),
        scene_id=scene_id,
        log_id='log',
        world_id=world_id,
    )


class TestProjection:
    def test_ground_point_ahead_of_level_camera(self, level_camera):
        u, v = project(level_camera, (5.0, 0.0))
        assert u == pytest.approx(320.0, abs=1e-9)
        assert v == pytest.approx(340.0, abs=1e-9)

    def test_point_behind_camera_is_outside(self, level_camera):
        assert project(level_camera, (-1.0, 0.0)) is None

    def test_point_outside_image_bounds(self, level_camera):
        assert project(level_camera, (2.0, 50.0)) is None

    def test_horizon_pixel_has_no_intersection(self, level_camera):
        assert back_project(level_camera, (320.0, 240.0)) is None
        assert back_project(level_camera, (100.0, 120.0)) is None

    def test_principal_point_of_tilted_camera(self):
        cam = CameraModel(
            np.array([[500.0, 0, 320], [0, 500, 240], [0, 0, 1]]),
            camera_rotation(math.pi / 2, math.atan(0.5)),
            np.array([3.0, 4.0, 1.0]),
            640,
            480,
        )
        x, y = back_project(cam, (320.0, 240.0))
        assert x == pytest.approx(3.0, abs=1e-9)
        assert y == pytest.approx(6.0, abs=1e-9)

    def test_round_trip_over_random_cameras(self, rng):
        K = np.array([[500.0, 0, 320], [0, 500, 240], [0, 0, 1]])
        checked = 0
        for _ in range(1000):
            cam = CameraModel(
                K,
                camera_rotation(rng.uniform(-math.pi, math.pi), rng.uniform(0.1, 0.8)),
                np.array([*rng.uniform(-50, 50, 2), rng.uniform(0.5, 3.0)]),
                640,
                480,
            )
            x = ground_points_in_view(cam, rng, 1)
            if not len(x):
                continue
            u = project(cam, x[0])
            assert u is not None
            back = back_project(cam, u)
            np.testing.assert_allclose(back, x[0], rtol=0, atol=1e-9)
            checked += 1
        assert checked > 900

    def test_constructed_invisible_cases(self, rng):
        for _ in range(100):
            heading = rng.uniform(-math.pi, math.pi)
            cam = CameraModel(
                np.array([[500.0, 0, 320], [0, 500, 240], [0, 0, 1]]),
                camera_rotation(heading, rng.uniform(0.0, 0.4)),
                np.array([0.0, 0.0, rng.uniform(0.5, 2.0)]),
                640,
                480,
            )
            behind = -rng.uniform(3.0, 20.0) * np.array([math.cos(heading), math.sin(heading)])
            assert project(cam, behind) is None
            assert back_project(cam, (rng.uniform(0, 640), rng.uniform(0, 5))) is None

    def test_camera_for_pose(self):
        mount = CameraMount(height=1.5, pitch=0.2, forward_offset=0.5)
        cam = camera_for_pose(Pose2D((2.0, 3.0), math.pi / 2), mount)
        np.testing.assert_allclose(cam.t, [2.0, 3.5, 1.5], atol=1e-12)
        forward = cam.R[:, 2]
        np.testing.assert_allclose(forward, [0.0, math.cos(0.2), -math.sin(0.2)], atol=1e-12)
        assert cam.size == (mount.width, mount.height_px)

    def test_invalid_rotation_is_rejected(self):
        with pytest.raises(DataError):
            CameraModel(np.eye(3), 2 * np.eye(3), np.zeros(3), 10, 10)

    def test_camera_file_round_trip(self, tmp_path):
        cam = camera_for_pose(Pose2D((1.25, -7.5), 0.3))
        write_camera(tmp_path / 'c.json', cam)
        assert read_camera(tmp_path / 'c.json') == cam

    def test_corrupt_camera_file(self, tmp_path):
        (tmp_path / 'c.json').write_text('{"fx": 1}')
        with pytest.raises(DataFormatError, match='c.json'):
            read_camera(tmp_path / 'c.json')


class TestSegMap:
    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(DataError):
            SegMap(np.full((2, 2, 2), 0.6, dtype=np.float32), NAMES, (0,))

    def test_traversable_set_must_be_valid(self):
        with pytest.raises(DataError):
            SegMap(np.full((2, 2, 2), 0.5, dtype=np.float32), NAMES, (2,))

    def test_binary_round_trip_is_bit_exact(self, tmp_path, rng):
        probs = rng.dirichlet(np.ones(4), size=(6, 5)).astype(np.float32)
        probs /= probs.sum(axis=2, keepdims=True)
        seg = SegMap(probs, ('road', 'sidewalk', 'car', 'sky'), (0, 1))
        write_segmap(tmp_path / 's.segmap', seg)
        back = read_segmap(tmp_path / 's.segmap')
        assert back == seg
        assert encode_segmap(back) == (tmp_path / 's.segmap').read_bytes()
        np.testing.assert_allclose(back.probs.sum(axis=2, dtype=np.float64), 1.0, atol=1e-6)

    def test_corrupt_files(self):
        blob = encode_segmap(one_hot_segmap(np.zeros((3, 3), dtype=int), NAMES, (0,)))
        with pytest.raises(DataFormatError):
            decode_segmap(b'BADMAGIC' + blob[8:])
        with pytest.raises(DataFormatError):
            decode_segmap(blob[:-2])

    def test_label_noise_leaks_to_other_classes(self):
        seg = one_hot_segmap(np.array([[0, 1]]), ('road', 'sidewalk', 'building'), (0, 1), 0.1)
        np.testing.assert_allclose(seg.probs[0, 0], [0.9, 0.05, 0.05], atol=1e-7)
        assert seg.traversable_probability()[0, 1] == pytest.approx(0.95, abs=1e-6)

    def test_synthetic_scene_classes(self, open_world):
        cam = camera_for_pose(Pose2D((10.0, 10.0), 0.0))
        seg = render_synthetic_segmap(open_world, cam, label_noise=0.1)
        assert (seg.width, seg.height) == cam.size
        labels = np.argmax(seg.probs, axis=2)
        assert seg.class_names[labels[0, 0]] == 'sky'
        assert seg.class_names[labels[-1, cam.width // 2]] == 'road'
        traversable = seg.traversable_probability()[-1, cam.width // 2]
        assert traversable == pytest.approx(0.9 + 0.1 / 18, abs=1e-6)

    def test_synthetic_scene_sees_obstacles(self):
        world = generate_world(0, {
            'layout': 'junction', 'extent': [20.0, 20.0], 'junction_road_width': 4.0,
        })
        cam = camera_for_pose(Pose2D((10.0, 2.0), math.pi / 2))
        seg = render_synthetic_segmap(world, cam, label_noise=0.0)
        names = {seg.class_names[i] for i in np.unique(np.argmax(seg.probs, axis=2))}
        assert {'road', 'building', 'sky'} <= names


class TestScoring:
    def test_certain_road_scores_one(self):
        cam = small_camera()
        x = ground_points_in_view(cam, np.random.default_rng(1), 1)[0]
        assert waypoint_prob(x, uniform_seg(cam, 1.0), cam, FAR_FOOT) == 1.0

    def test_footprint_overrides_blocked_pixel(self):
        cam = small_camera()
        x = ground_points_in_view(cam, np.random.default_rng(2), 1)[0]
        foot = FootprintDisk(tuple(x + 0.1), 0.5)
        assert waypoint_prob(x, uniform_seg(cam, 0.0), cam, foot) == 1.0

    def test_sum_over_traversable_classes(self):
        cam = small_camera()
        x = ground_points_in_view(cam, np.random.default_rng(3), 1)[0]
        assert waypoint_prob(x, uniform_seg(cam, 0.6), cam, FAR_FOOT) == pytest.approx(0.6, abs=1e-6)

    def test_trajectory_on_road(self, rng):
        cam = small_camera()
        traj = Trajectory(ground_points_in_view(cam, rng, 40)[:8])
        assert trajectory_prob(traj, uniform_seg(cam, 1.0), cam, FAR_FOOT) == 1.0

    def test_one_blocked_waypoint_annihilates(self, rng):
        cam = small_camera()
        points = ground_points_in_view(cam, rng, 40)[:8]
        labels = np.zeros((cam.height, cam.width), dtype=int)
        cols, rows, _ = cam.pixel_indices(points[3:4])
        labels[rows[0], cols[0]] = 1
        seg = one_hot_segmap(labels, NAMES, (0,))
        assert trajectory_prob(Trajectory(points), seg, cam, FAR_FOOT) == 0.0

    def test_all_outside_visible_area(self):
        cam = small_camera()
        behind = Trajectory(np.column_stack([-np.arange(1.0, 9.0), np.zeros(8)]))
        assert trajectory_prob(behind, uniform_seg(cam, 0.0), cam, FAR_FOOT) == 0.00390625

    def test_product_over_concatenation(self, rng):
        cam = small_camera()
        probs = rng.dirichlet(np.ones(2), size=(cam.height, cam.width)).astype(np.float32)
        probs[..., 1] = 1.0 - probs[..., 0]
        seg = SegMap(probs, NAMES, (0,))
        points = ground_points_in_view(cam, rng, 60)[:12]
        whole = trajectory_prob(Trajectory(points), seg, cam, FAR_FOOT)
        a = trajectory_prob(Trajectory(points[:5]), seg, cam, FAR_FOOT)
        b = trajectory_prob(Trajectory(points[5:]), seg, cam, FAR_FOOT)
        assert whole == pytest.approx(a * b, rel=1e-12)

    def test_raising_traversability_never_lowers_scores(self, rng):
        cam = small_camera()
        road = rng.uniform(0, 1, size=(cam.height, cam.width))
        before = np.stack([road, 1 - road], axis=2).astype(np.float32)
        before[..., 1] = 1.0 - before[..., 0]
        raised = road + rng.uniform(0, 1, size=road.shape) * (1 - road) * (rng.random(road.shape) < 0.3)
        after = np.stack([raised, 1 - raised], axis=2).astype(np.float32)
        after[..., 1] = 1.0 - after[..., 0]
        positions = np.stack([ground_points_in_view(cam, rng, 80)[:8] for _ in range(50)])
        low = SceneScorer(SegMap(before, NAMES, (0,)), cam, FAR_FOOT).score_batch(positions)
        high = SceneScorer(SegMap(after, NAMES, (0,)), cam, FAR_FOOT).score_batch(positions)
        assert np.all(high >= low)
        assert np.all((low >= 0) & (high <= 1))

    def test_size_mismatch(self):
        cam = small_camera()
        with pytest.raises(DataError):
            SceneScorer(SegMap(np.ones((2, 2, 1), dtype=np.float32), ('road',), (0,)), cam, FAR_FOOT)

    def test_offroad_flags_visible_blocked_waypoints(self, rng):
        cam = small_camera()
        positions = np.stack([ground_points_in_view(cam, rng, 40)[:8] for _ in range(3)])
        assert SceneScorer(uniform_seg(cam, 0.2), cam, FAR_FOOT).offroad(positions).all()
        assert not SceneScorer(uniform_seg(cam, 0.8), cam, FAR_FOOT).offroad(positions).any()

    def test_footprint_needs_positive_radius(self):
        with pytest.raises(DataError):
            FootprintDisk((0.0, 0.0), 0.0)


class TestOverlay:
    def test_no_trajectories_keeps_background(self, level_camera, rng):
        background = rng.integers(0, 255, size=(480, 640, 3), dtype=np.uint8)
        np.testing.assert_array_equal(render_overlay(background, level_camera, []), background)

    def test_single_waypoint_is_one_marker(self, level_camera):
        image = render_overlay(None, level_camera, [(np.array([[5.0, 0.0]]), STYLES['accepted'])])
        changed = np.argwhere((image != 255).any(axis=2))
        np.testing.assert_array_equal(changed, [[340, 320]])
        assert tuple(image[340, 320]) == RED

    def test_markers_match_hand_projection(self, level_camera):
        points = [(5.0, 0.0), (10.0, 2.0), (4.0, -1.0)]
        layers = [(np.array([p]), Style((1, 2, 3))) for p in points]
        image = render_overlay(None, level_camera, layers)
        for row, col in ((340, 320), (290, 220), (365, 445)):
            assert tuple(image[row, col]) == (1, 2, 3)
        assert (image != 255).any(axis=2).sum() == 3

    def test_deterministic(self, level_camera, rng):
        accepted = np.cumsum(rng.uniform(0.2, 0.8, size=(5, 8, 2)), axis=1) + [2.0, -1.0]
        layers = prediction_layers(None, accepted[0], accepted[1:], accepted[:2])
        first = render_overlay(None, level_camera, layers)
        np.testing.assert_array_equal(first, render_overlay(None, level_camera, layers))
        assert (first != 255).any()

    def test_visualizations(self):
        seg = one_hot_segmap(np.array([[0, 1]]), NAMES, (0,))
        np.testing.assert_array_equal(render_traversability(seg)[0], [[255] * 3, [0] * 3])
        assert tuple(render_segmentation(seg)[0, 0]) == (128, 64, 128)

    def test_world_plot(self, open_world):
        image = render_world(open_world, [(np.array([[0.1, 0.1]]), STYLES['past'])], scale=2)
        assert image.shape == (80, 80, 3)
        assert tuple(image[-1, 0]) == (0, 0, 0)

    def test_ppm_round_trip(self, tmp_path, rng):
        image = rng.integers(0, 256, size=(7, 9, 3), dtype=np.uint8)
        write_ppm(tmp_path / 'x.ppm', image)
        assert (tmp_path / 'x.ppm').read_bytes().startswith(b'P6')
        np.testing.assert_array_equal(read_ppm(tmp_path / 'x.ppm'), image)


class TestCatalog:
    def test_renders_from_world(self, open_world):
        catalog = SceneCatalog({'w': open_world})
        seg, cam = catalog.get(make_instance())
        assert cam.t[0] == pytest.approx(5.0)
        assert catalog.get(make_instance()) == (seg, cam)

    def test_prefers_stored_files(self, tmp_path, open_world):
        instance = make_instance()
        scene = render_scene(instance, open_world, label_noise=0.2)
        write_scene(tmp_path, instance.scene_id, scene)
        seg, cam = SceneCatalog({}, tmp_path).get(instance)
        assert seg == scene[0] and cam == scene[1]

    def test_unknown_world(self):
        with pytest.raises(MissingInstanceError):
            SceneCatalog({}).get(make_instance(world_id='missing'))


class TestConfigSerializers:
    def test_scene_config(self):
        from django.conf import settings

        assert validate_config(SceneConfigSerializer, settings.SCENE, 'scene')['label_noise'] == 0.1
        bad = dict(settings.SCENE, traversable_classes=['lava'])
        assert not SceneConfigSerializer(data=bad).is_valid()

    def test_camera_mount(self):
        from django.conf import settings

        data = validate_config(CameraMountSerializer, settings.CAMERA_MOUNT, 'camera mount')
        assert CameraMount(**data) == CameraMount.from_settings()
