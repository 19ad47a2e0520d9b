import json
import math

import numpy as np
import pytest
from django.conf import settings
from scipy.special import ndtr

from neural.gradcheck import grad_check
from neural.serializers import read_params, write_params
from scene.segmentation import SegMap
from sceneintent.exceptions import (
    ConfigurationError,
    DataError,
    DataFormatError,
    InsufficientDataError,
    MissingGroundTruthError,
)
from sceneintent.validators import validate_config
from trajectories.core import Pose2D, RelativeTrajectory, Trajectory, batch_to_world, to_relative
from trajectories.driving import drive_scenarios
from trajectories.serializers import load_dataset
from trajectories.windows import DatasetSplit, window_log
from trajectories.worlds import generate_world

from .fusion import (
    FusionConfig,
    PredictionSet,
    fuse,
    mean_trajectory,
    raw_prediction,
    rejection_sample,
    select,
    selection_order,
)
from .gan import (
    DISCRIMINATOR,
    GENERATOR,
    GanArchitecture,
    GanModel,
    discriminate,
    generate,
    sample_k,
    sample_noise,
    variety_loss,
)
from .serializers import (
    FusionConfigSerializer,
    TrainConfigSerializer,
    prediction_records,
    read_checkpoint,
    read_model,
    read_prediction_jsonl,
    sidecar_path,
    write_checkpoint,
    write_prediction_jsonl,
)
from .training import (
    TrainConfig,
    TrainingState,
    discriminator_loss,
    generator_loss,
    smoothed_labels,
    train,
    validation_min_k_ade,
)


def curved_log(positions=26, turn=0.05, speed=0.75, log_id='log'):
    headings = turn * np.arange(positions - 1)
    steps = speed * np.column_stack([np.cos(headings), np.sin(headings)])
    return window_log(Trajectory(np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])), log_id)


def training_split(positions=26):
    return DatasetSplit(train=curved_log(positions), val=[], test=[], split_seed=0)


def straight_past(step=(0.5, 0.0)):
    return RelativeTrajectory(np.tile([step], (8, 1)))


class OutcomeSampler:
    """
    Proposal source with finitely many outcomes; the first noise coordinate picks one.
    """

    def __init__(self, steps, probs):
        self.steps = np.asarray(steps, dtype=np.float64)
        self.edges = np.cumsum(probs) / np.sum(probs)

    def generate_batch(self, past, noise):
        u = ndtr(np.asarray(noise)[:, 0])
        index = np.minimum(np.searchsorted(self.edges, u, side='right'), len(self.steps) - 1)
        return self.steps[index]


class OutcomeScorer:
    def __init__(self, sampler, scores, agent=Pose2D()):
        self.ends = batch_to_world(sampler.steps, agent)[:, -1]
        self.scores = np.asarray(scores, dtype=np.float64)

    def outcome_of(self, positions):
        distance = np.linalg.norm(positions[:, -1, None, :] - self.ends[None], axis=2)
        return np.argmin(distance, axis=1)

    def score_batch(self, positions):
        return self.scores[self.outcome_of(positions)]


def outcome_steps(n):
    return np.array([np.tile([1.0, 0.5 * (j - n / 2.0)], (8, 1)) for j in range(n)])


def empirical(scorer, pred, n):
    return np.bincount(scorer.outcome_of(pred.positions), minlength=n) / len(pred)


def prediction_set(positions, agent=Pose2D()):
    positions = np.asarray(positions, dtype=np.float64)
    return PredictionSet(
        positions=positions,
        scores=np.ones(len(positions)),
        proposals_drawn=len(positions),
        accepted_count=len(positions),
        fallback_used=False,
        seed=0,
        agent_pose=agent,
        requested_k=len(positions),
    )


class TestArchitecture:
    def test_defaults_come_from_settings(self):
        arch = GanArchitecture.from_settings()
        assert arch.decoder_hidden == settings.GAN_ARCHITECTURE['decoder_hidden']
        assert arch.noise_dim == 8

    @pytest.mark.parametrize('override', [{'noise_dim': 4}, {'obs_len': 6}, {'embed_dim': 0}])
    def test_fixed_dimensions_are_enforced(self, override):
        with pytest.raises(ConfigurationError):
            GanArchitecture.from_settings(override)

    def test_parameters_must_match_architecture(self, small_model):
        params = dict(small_model.params)
        params.pop('gen.head.b')
        with pytest.raises(DataError):
            GanModel(small_model.architecture, params)

    def test_non_finite_parameters_are_rejected(self, small_model):
        params = dict(small_model.params)
        params['disc.head.b'] = np.array([np.nan])
        with pytest.raises(DataError):
            small_model.with_params(params)

    def test_initialization_is_seeded(self, small_arch):
        a = GanModel.initialize(small_arch, 3)
        b = GanModel.initialize(small_arch, 3)
        c = GanModel.initialize(small_arch, 4)
        assert all(np.array_equal(a.params[name], b.params[name]) for name in a.params)
        assert not np.array_equal(a.params['gen.head.W'], c.params['gen.head.W'])


class TestGenerate:
    def test_deterministic(self, small_model, rng):
        past = RelativeTrajectory(rng.normal(size=(8, 2)))
        noise = rng.standard_normal(8)
        assert generate(small_model, past, noise) == generate(small_model, past, noise)

    def test_fresh_model_outputs_are_finite_and_bounded(self, small_model, rng):
        for _ in range(20):
            past = RelativeTrajectory(rng.normal(0.0, 2.0, size=(8, 2)))
            future = generate(small_model, past, rng.standard_normal(8))
            assert len(future) == 8
            assert np.all(np.isfinite(future.displacements))
            assert np.all(np.linalg.norm(future.displacements, axis=1) < 10.0)

    def test_distinct_noise_gives_distinct_futures(self, small_model):
        past = straight_past()
        a, b = sample_k(small_model, past, 2, rng_seed=5)
        assert np.abs(a.displacements - b.displacements).max() > 1e-6

    def test_translation_of_the_absolute_past_is_irrelevant(self, small_model, rng):
        positions = rng.integers(-40, 40, size=(9, 2)) * 0.25
        here = to_relative(Trajectory(positions))
        there = to_relative(Trajectory(positions + np.array([100.0, -50.0])))
        assert here == there
        noise = rng.standard_normal(8)
        assert generate(small_model, here, noise) == generate(small_model, there, noise)

    def test_wrong_past_length(self, small_model):
        with pytest.raises(DataError):
            generate(small_model, RelativeTrajectory(np.zeros((7, 2))), np.zeros(8))

    def test_noise_must_have_eight_entries(self, small_model):
        with pytest.raises(DataError):
            generate(small_model, straight_past(), np.zeros(5))


class TestSampling:
    def test_single_sample_equals_generate_with_first_draw(self, small_model):
        past = straight_past((0.3, 0.1))
        first = sample_noise(1, 11)[0]
        assert sample_k(small_model, past, 1, 11)[0] == generate(small_model, past, first)

    def test_twenty_samples(self, small_model):
        samples = sample_k(small_model, straight_past(), 20, 0)
        assert len(samples) == 20
        assert all(len(sample) == 8 for sample in samples)

    def test_noise_rows_are_nested(self):
        assert np.array_equal(sample_noise(20, 9)[:5], sample_noise(5, 9))

    def test_noise_is_standard_normal(self):
        noise = sample_noise(100_000, 2)
        assert noise.shape == (100_000, 8)
        assert np.all(np.abs(noise.mean(axis=0)) < 0.02)
        assert np.all(np.abs(noise.std(axis=0) - 1.0) < 0.02)

    def test_k_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            sample_noise(0, 1)


class TestDiscriminate:
    def test_zero_head_scores_one_half(self, small_model, rng):
        params = dict(small_model.params)
        params['disc.head.W'] = np.zeros_like(params['disc.head.W'])
        params['disc.head.b'] = np.zeros_like(params['disc.head.b'])
        model = small_model.with_params(params)
        for _ in range(5):
            past = RelativeTrajectory(rng.normal(size=(8, 2)))
            future = RelativeTrajectory(rng.normal(size=(8, 2)))
            assert discriminate(model, past, future) == 0.5

    def test_output_is_a_probability(self, small_model, rng):
        for _ in range(10):
            past = RelativeTrajectory(rng.normal(0.0, 3.0, size=(8, 2)))
            future = RelativeTrajectory(rng.normal(0.0, 3.0, size=(8, 2)))
            assert 0.0 < discriminate(small_model, past, future) < 1.0

    def test_length_mismatch(self, small_model):
        with pytest.raises(DataError):
            discriminate(small_model, straight_past(), RelativeTrajectory(np.zeros((6, 2))))


class TestVarietyLoss:
    def test_zero_when_a_sample_is_the_ground_truth(self, small_model):
        past = straight_past()
        truth = sample_k(small_model, past, 5, 3)[2]
        assert variety_loss(small_model, past, truth, 5, 3) == 0.0

    def test_single_sample_is_plain_squared_error(self, small_model, rng):
        past = straight_past()
        truth = RelativeTrajectory(rng.normal(size=(8, 2)))
        sample = sample_k(small_model, past, 1, 4)[0]
        expected = float(np.sum((sample.displacements - truth.displacements) ** 2))
        assert variety_loss(small_model, past, truth, 1, 4) == pytest.approx(expected, rel=1e-12)

    def test_more_samples_never_hurt(self, small_model, rng):
        past = straight_past()
        for seed in range(5):
            truth = RelativeTrajectory(rng.normal(size=(8, 2)))
            single = variety_loss(small_model, past, truth, 1, seed)
            assert variety_loss(small_model, past, truth, 20, seed) <= single + 1e-12

    def test_summed_and_mean_errors_pick_the_same_sample(self, small_model, rng):
        past = straight_past()
        truth = rng.normal(size=(8, 2))
        samples = np.stack([s.displacements for s in sample_k(small_model, past, 20, 1)])
        summed = np.sum((samples - truth) ** 2, axis=(1, 2))
        assert np.argmin(summed) == np.argmin(summed / 16.0)


class TestLosses:
    def test_smoothed_labels_stay_in_range(self, rng):
        real = smoothed_labels(rng, 1000, 0.7, 1.0)
        fake = smoothed_labels(rng, 1000, 0.0, 0.3)
        assert real.shape == (1000, 1)
        assert real.min() >= 0.7 and real.max() <= 1.0
        assert fake.min() >= 0.0 and fake.max() <= 0.3

    def _batch(self, rng, k=3):
        past = rng.normal(0.0, 0.5, size=(2, 8, 2))
        future = rng.normal(0.0, 0.5, size=(2, 8, 2))
        return past, future, rng.standard_normal((2, k, 8))

    def test_generator_loss_gradients(self, small_model, rng):
        past, future, noise = self._batch(rng)
        arch = small_model.architecture
        fixed = small_model.subset(DISCRIMINATOR)

        def forward(p, _):
            value, grads = generator_loss({**fixed, **p}, arch, past, future, noise)
            return value, lambda d: {name: d * g for name, g in grads.items()}

        error = grad_check(
            forward, small_model.subset(GENERATOR), None, lambda out: (out, 1.0),
            max_entries=6, rng=np.random.default_rng(1),
        )
        assert error < 1e-3

    def test_discriminator_loss_gradients(self, small_model, rng):
        past, future, noise = self._batch(rng)
        arch = small_model.architecture
        fixed = small_model.subset(GENERATOR)
        real = smoothed_labels(rng, 2, 0.7, 1.0)
        fake = smoothed_labels(rng, 2, 0.0, 0.3)

        def forward(p, _):
            value, grads = discriminator_loss({**fixed, **p}, arch, past, future, noise[:, 0], real, fake)
            return value, lambda d: {name: d * g for name, g in grads.items()}

        error = grad_check(
            forward, small_model.subset(DISCRIMINATOR), None, lambda out: (out, 1.0),
            max_entries=6, rng=np.random.default_rng(2),
        )
        assert error < 1e-3

    def test_loss_gradients_touch_only_their_network(self, small_model, rng):
        past, future, noise = self._batch(rng)
        arch = small_model.architecture
        _, g_grads = generator_loss(dict(small_model.params), arch, past, future, noise)
        _, d_grads = discriminator_loss(
            dict(small_model.params), arch, past, future, noise[:, 0], np.ones((2, 1)), np.zeros((2, 1))
        )
        assert all(name.startswith(GENERATOR) for name in g_grads)
        assert all(name.startswith(DISCRIMINATOR) for name in d_grads)


class TestTraining:
    def config(self, **overrides):
        values = dict(epochs=1, batch_size=4, k_variety=3, validation_k=3, seed=1)
        values.update(overrides)
        return TrainConfig(**values)

    def test_one_epoch_smoke(self, small_model):
        split = training_split(26)
        assert len(split.train) == 10
        state = train(small_model, split, self.config())
        assert state.epoch == 1
        assert len(state.history) == 1
        metrics = state.history[0].as_dict()
        assert all(math.isfinite(metrics[key]) for key in ('d_loss', 'g_loss', 'val_min_k_ade'))

    def test_empty_training_split(self, small_model):
        with pytest.raises(InsufficientDataError):
            train(small_model, DatasetSplit([], [], [], 0), self.config())

    def test_same_seed_same_parameters(self, small_model):
        split = training_split()
        a = train(small_model, split, self.config(epochs=2))
        b = train(small_model, split, self.config(epochs=2))
        assert all(np.array_equal(a.model.params[name], b.model.params[name]) for name in a.model.params)

    def test_resume_matches_uninterrupted_run(self, small_model, tmp_path):
        split = training_split()
        full = train(small_model, split, self.config(epochs=3))
        first = train(small_model, split, self.config(epochs=1))
        write_checkpoint(tmp_path / 'ckpt.bin', first, self.config(epochs=1))
        restored = read_checkpoint(tmp_path / 'ckpt.bin').state
        resumed = train(restored.model, split, self.config(epochs=3), state=restored)
        assert resumed.epoch == 3
        assert all(
            np.array_equal(full.model.params[name], resumed.model.params[name])
            for name in full.model.params
        )
        assert resumed.history == full.history

    def test_on_epoch_sees_every_epoch(self, small_model):
        seen = []
        train(small_model, training_split(), self.config(epochs=2), on_epoch=lambda s: seen.append(s.epoch))
        assert seen == [1, 2]

    @pytest.mark.slow
    def test_validation_error_drops_with_training(self, small_model):
        split = training_split(56)
        cfg = self.config(epochs=10, batch_size=8, k_variety=5, validation_k=20,
                          lr_generator=1e-2, lr_discriminator=1e-2)
        before = validation_min_k_ade(small_model, split.train, 20, cfg.seed)
        state = train(small_model, split, cfg)
        assert state.history[-1].val_min_k_ade < before

    @pytest.mark.parametrize('override', [
        {'k_variety': 0},
        {'lr_generator': 0.0},
        {'real_label_range': (0.9, 0.7)},
        {'fake_label_range': (0.0, 1.5)},
    ])
    def test_invalid_config(self, override):
        with pytest.raises(ConfigurationError):
            self.config(**override)


class TestCheckpoints:
    def test_round_trip(self, small_model, tmp_path):
        cfg = TrainConfig(epochs=1, batch_size=5, k_variety=2, validation_k=2)
        state = train(small_model, training_split(), cfg)
        path = tmp_path / 'model.ckpt'
        write_checkpoint(path, state, cfg, manifest_sha256='ab' * 32)
        checkpoint = read_checkpoint(path)
        assert checkpoint.manifest_sha256 == 'ab' * 32
        assert checkpoint.train_config == cfg.as_dict()
        assert checkpoint.state.epoch == 1
        assert checkpoint.state.history == state.history
        assert checkpoint.state.adam_generator.step == state.adam_generator.step
        for name, value in state.model.params.items():
            assert np.array_equal(checkpoint.state.model.params[name], value)

    def test_truncated_file_names_the_file(self, small_model, tmp_path):
        path = tmp_path / 'model.ckpt'
        write_checkpoint(path, TrainingState.start(small_model, TrainConfig()), TrainConfig())
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(DataFormatError, match='model.ckpt'):
            read_checkpoint(path)

    def test_plain_parameter_file_is_not_a_checkpoint(self, small_model, tmp_path):
        path = tmp_path / 'params.bin'
        write_params(path, {'model': dict(small_model.params)})
        with pytest.raises(DataFormatError):
            read_checkpoint(path)

    def test_config_and_manifest_hash_live_in_the_sidecar(self, small_model, tmp_path):
        cfg = TrainConfig(epochs=1, batch_size=5, k_variety=2, validation_k=2)
        path = tmp_path / 'model.ckpt'
        write_checkpoint(path, TrainingState.start(small_model, cfg), cfg, manifest_sha256='cd' * 32)
        sidecar = json.loads(sidecar_path(path).read_text(encoding='utf-8'))
        assert sidecar_path(path).name == 'model.ckpt.json'
        assert sidecar['train_config'] == cfg.as_dict()
        assert sidecar['manifest_sha256'] == 'cd' * 32
        _, meta = read_params(path)
        assert 'train_config' not in meta
        assert 'manifest_sha256' not in meta

    def test_missing_sidecar_leaves_the_config_unknown(self, small_model, tmp_path):
        path = tmp_path / 'model.ckpt'
        write_checkpoint(path, TrainingState.start(small_model, TrainConfig()), TrainConfig(), 'ab' * 32)
        sidecar_path(path).unlink()
        checkpoint = read_checkpoint(path)
        assert checkpoint.train_config == {}
        assert checkpoint.manifest_sha256 == ''
        assert checkpoint.state.epoch == 0

    def test_broken_sidecar_names_the_file(self, small_model, tmp_path):
        path = tmp_path / 'model.ckpt'
        write_checkpoint(path, TrainingState.start(small_model, TrainConfig()), TrainConfig())
        sidecar_path(path).write_text('{not json', encoding='utf-8')
        with pytest.raises(DataFormatError, match='model.ckpt.json'):
            read_checkpoint(path)


class TestRejectionSampling:
    def test_always_accepting_scorer_returns_the_first_block(self):
        sampler = OutcomeSampler(outcome_steps(3), [1, 1, 1])
        scorer = OutcomeScorer(sampler, [1.0, 1.0, 1.0])
        past = straight_past()
        pred = rejection_sample(sampler, past, Pose2D(), scorer, FusionConfig(k=20, seed=3))
        raw = raw_prediction(sampler, past, Pose2D(), 20, 3)
        assert pred.acceptance_rate == 1.0
        assert pred.proposals_drawn == 20
        assert not pred.fallback_used
        assert np.array_equal(pred.positions, raw.positions)

    def test_zero_score_branch_is_annihilated(self):
        sampler = OutcomeSampler(outcome_steps(2), [0.5, 0.5])
        scorer = OutcomeScorer(sampler, [0.0, 1.0])
        pred = rejection_sample(sampler, straight_past(), Pose2D(), scorer, FusionConfig(k=200, max_proposals=5000))
        assert len(pred) == 200
        assert np.all(scorer.outcome_of(pred.positions) == 1)
        assert np.all(pred.scores > 0)

    def test_two_to_one_proportions(self):
        sampler = OutcomeSampler(outcome_steps(2), [0.5, 0.5])
        scorer = OutcomeScorer(sampler, [1.0, 0.5])
        cfg = FusionConfig(k=100_000, max_proposals=1_000_000, seed=1)
        pred = rejection_sample(sampler, straight_past(), Pose2D(), scorer, cfg)
        freq = empirical(scorer, pred, 2)
        assert 0.5 * np.abs(freq - [2 / 3, 1 / 3]).sum() < 0.02
        assert pred.acceptance_rate == pytest.approx(0.75, abs=0.01)

    @pytest.mark.parametrize('seed', [0, 1, 2])
    def test_random_stubs_follow_the_product_distribution(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        probs = rng.dirichlet(np.ones(n))
        scores = rng.uniform(0.1, 1.0, n)
        sampler = OutcomeSampler(outcome_steps(n), probs)
        scorer = OutcomeScorer(sampler, scores)
        cfg = FusionConfig(k=100_000, max_proposals=2_000_000, seed=seed)
        pred = rejection_sample(sampler, straight_past(), Pose2D(), scorer, cfg)
        target = probs * scores / np.sum(probs * scores)
        assert not pred.fallback_used
        assert 0.5 * np.abs(empirical(scorer, pred, n) - target).sum() < 0.02

    def test_scaling_scores_changes_the_rate_not_the_distribution(self):
        probs = [0.2, 0.3, 0.5]
        sampler = OutcomeSampler(outcome_steps(3), probs)
        base = np.array([0.9, 0.3, 0.6])
        cfg = FusionConfig(k=50_000, max_proposals=2_000_000, seed=4)
        full = rejection_sample(sampler, straight_past(), Pose2D(), OutcomeScorer(sampler, base), cfg)
        scaled_scorer = OutcomeScorer(sampler, 0.3 * base)
        scaled = rejection_sample(sampler, straight_past(), Pose2D(), scaled_scorer, cfg)
        target = np.array(probs) * base / np.dot(probs, base)
        assert 0.5 * np.abs(empirical(scaled_scorer, scaled, 3) - target).sum() < 0.02
        assert scaled.acceptance_rate == pytest.approx(0.3 * full.acceptance_rate, rel=0.05)

    def test_deterministic_given_seed(self):
        sampler = OutcomeSampler(outcome_steps(4), [1, 2, 3, 4])
        scorer = OutcomeScorer(sampler, [0.2, 0.9, 0.4, 0.7])
        cfg = FusionConfig(k=30, max_proposals=1000, seed=8)
        a = rejection_sample(sampler, straight_past(), Pose2D(), scorer, cfg)
        b = rejection_sample(sampler, straight_past(), Pose2D(), scorer, cfg)
        assert np.array_equal(a.positions, b.positions)
        assert a.proposals_drawn == b.proposals_drawn

    def test_fallback_fills_from_best_rejected(self):
        sampler = OutcomeSampler(outcome_steps(2), [0.5, 0.5])
        scorer = OutcomeScorer(sampler, [0.0, 1e-12])
        pred = rejection_sample(sampler, straight_past(), Pose2D(), scorer, FusionConfig(k=10, max_proposals=40))
        assert pred.fallback_used
        assert pred.accepted_count == 0
        assert pred.proposals_drawn == 40
        assert 1 <= len(pred) <= 10
        assert np.all(pred.scores > 0)

    def test_fallback_without_any_mass_returns_unfiltered_samples(self):
        sampler = OutcomeSampler(outcome_steps(2), [0.5, 0.5])
        scorer = OutcomeScorer(sampler, [0.0, 0.0])
        pred = rejection_sample(sampler, straight_past(), Pose2D(), scorer, FusionConfig(k=10, max_proposals=25))
        assert pred.fallback_used
        assert len(pred) == 10
        assert pred.acceptance_rate == 0.0

    def test_max_proposals_below_k(self):
        with pytest.raises(ConfigurationError):
            FusionConfig(k=20, max_proposals=10)


class TestFuse:
    def test_fully_traversable_scene_accepts_everything(self, small_model, level_camera):
        probs = np.zeros((level_camera.height, level_camera.width, 2), dtype=np.float32)
        probs[..., 0] = 1.0
        seg = SegMap(probs, ('road', 'building'), (0,))
        past = straight_past()
        agent = Pose2D((0.0, 0.0), 0.0)
        pred = fuse(small_model, past, agent, seg, level_camera, FusionConfig(k=20, seed=2), foot_radius=1e6)
        assert pred.acceptance_rate == 1.0
        assert np.array_equal(pred.positions, raw_prediction(small_model, past, agent, 20, 2).positions)

    def test_accepted_trajectories_have_positive_probability(self, small_model, level_camera, rng):
        probs = np.zeros((level_camera.height, level_camera.width, 2), dtype=np.float32)
        probs[..., 0] = rng.uniform(size=probs.shape[:2]) > 0.3
        probs[..., 1] = 1.0 - probs[..., 0]
        seg = SegMap(probs, ('road', 'building'), (0,))
        pred = fuse(small_model, straight_past(), Pose2D(), seg, level_camera, FusionConfig(k=20, seed=5))
        if not pred.fallback_used:
            assert np.all(pred.scores > 0)
        assert np.all(pred.scores[:pred.accepted_count] > 0)


class TestSelect:
    def test_single_sample_all_strategies_agree(self):
        positions = np.cumsum(np.tile([[0.5, 0.1]], (8, 1)), axis=0)[None]
        pred = prediction_set(positions)
        truth = Trajectory(positions[0] + 1.0)
        for strategy in ('random', 'mean', 'min_k'):
            chosen = select(pred, strategy, truth)
            assert np.allclose(chosen.positions, positions[0], atol=1e-12)

    def test_mean_of_mirror_images_goes_straight(self):
        up = np.cumsum(np.tile([[1.0, 1.0]], (8, 1)), axis=0)
        down = up * np.array([1.0, -1.0])
        chosen = mean_trajectory(prediction_set([up, down]))
        expected = np.column_stack([np.arange(1.0, 9.0), np.zeros(8)])
        assert np.allclose(chosen.positions, expected, atol=1e-12)

    def test_min_k_picks_the_ground_truth(self, rng):
        positions = rng.normal(size=(6, 8, 2))
        truth = Trajectory(positions[4])
        assert select(prediction_set(positions), 'min_k', truth) == truth

    def test_min_k_requires_ground_truth(self, rng):
        with pytest.raises(MissingGroundTruthError):
            select(prediction_set(rng.normal(size=(3, 8, 2))), 'min_k')

    def test_random_is_first_sample_or_seeded(self, rng):
        positions = rng.normal(size=(5, 8, 2))
        pred = prediction_set(positions)
        assert np.array_equal(select(pred, 'random').positions, positions[0])
        assert select(pred, 'random', rng_seed=3) == select(pred, 'random', rng_seed=3)

    def test_seeded_random_draws_every_sample_uniformly(self, rng):
        positions = rng.normal(size=(5, 8, 2))
        pred = prediction_set(positions)
        counts = np.zeros(5, dtype=int)
        for seed in range(500):
            chosen = select(pred, 'random', rng_seed=seed).positions
            counts[[np.array_equal(chosen, row) for row in positions].index(True)] += 1
        assert counts.sum() == 500
        assert counts.min() >= 60 and counts.max() <= 140

    def test_selection_order_is_a_seeded_permutation(self):
        assert selection_order(4).tolist() == [0, 1, 2, 3]
        order = selection_order(20, 5)
        assert sorted(order.tolist()) == list(range(20))
        assert np.array_equal(order, selection_order(20, 5))

    def test_unknown_strategy(self, rng):
        with pytest.raises(ConfigurationError):
            select(prediction_set(rng.normal(size=(2, 8, 2))), 'median')


class TestExports:
    def test_prediction_records(self, rng, tmp_path):
        positions = rng.normal(size=(4, 8, 2))
        pred = prediction_set(positions)
        truth = Trajectory(positions[2] + 0.01)
        records = prediction_records(pred, truth, scene_id='log-00003')
        assert [r['index'] for r in records] == [0, 1, 2, 3]
        assert records[0]['selected_by'] == ['random']
        assert records[2]['selected_by'] == ['min_k']
        assert all(r['accepted'] and r['scene_id'] == 'log-00003' for r in records)

        path = tmp_path / 'pred.jsonl'
        assert write_prediction_jsonl(path, pred, truth, 'log-00003') == 4
        loaded = read_prediction_jsonl(path)
        assert np.allclose(loaded[1]['waypoints'], positions[1], atol=0)
        assert loaded[0]['k'] == 4 and loaded[0]['acceptance_rate'] == 1.0


class TestConfigSerializers:
    def test_training_settings_are_valid(self):
        assert validate_config(TrainConfigSerializer, settings.TRAINING, 'training')['k_variety'] == 20

    def test_inverted_label_range(self):
        data = dict(settings.TRAINING, real_label_range=[1.0, 0.7])
        with pytest.raises(ConfigurationError):
            validate_config(TrainConfigSerializer, data, 'training')

    def test_fusion_budget_below_k(self):
        with pytest.raises(ConfigurationError):
            validate_config(FusionConfigSerializer, {'k': 20, 'max_proposals': 5, 'seed': 0}, 'fusion')


def junction_decisions(seed=5, runs=12):
    """
    Instances whose agent is still in the junction stem while the true future
    ends in the crossing road.
    """
    world = generate_world(seed, {'layout': 'junction'})
    cfg = settings.WORLD_GENERATION
    width, height = cfg['extent']
    road = cfg['junction_road_width']
    bar_bottom = height - 2 * road
    decisions = []
    for index, log in enumerate(drive_scenarios(world, runs, seed)):
        for instance in window_log(log, f'log-{index:05d}'):
            x, y = instance.agent_pose.position
            end = instance.future_world().positions[-1]
            if y < bar_bottom and abs(x - width / 2) < road / 2 and end[1] >= bar_bottom:
                decisions.append(instance)
    return decisions


@pytest.mark.slow
class TestTrainedModel:
    def test_junction_samples_bear_both_ways(self, trained_run):
        model = read_model(trained_run[1])
        decisions = junction_decisions()
        assert len(decisions) >= 5
        both = 0
        for index, instance in enumerate(decisions):
            samples = sample_k(model, instance.past, 20, index)
            lateral = [sample.displacements.sum(axis=0)[1] for sample in samples]
            both += min(lateral) < 0 < max(lateral)
        assert both / len(decisions) >= 0.8

    def test_discriminator_prefers_real_futures(self, trained_run):
        dataset, checkpoint = trained_run
        model = read_model(checkpoint)
        instances = load_dataset(dataset).val[:100]
        noise = sample_noise(len(instances), 0, model.architecture.noise_dim)
        real = [discriminate(model, instance.past, instance.future) for instance in instances]
        fake = [
            discriminate(model, instance.past, generate(model, instance.past, z))
            for instance, z in zip(instances, noise)
        ]
        assert np.mean(real) > np.mean(fake)

    def test_noise_still_matters(self, trained_run):
        dataset, checkpoint = trained_run
        model = read_model(checkpoint)
        instance = load_dataset(dataset).val[0]
        first, second = sample_k(model, instance.past, 2, 0)
        assert np.max(np.abs(first.displacements - second.displacements)) > 1e-6
