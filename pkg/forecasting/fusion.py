"""
Rejection-sampling fusion of generator proposals with a scene score.

A proposal X drawn from G(z | X_past) is accepted with probability equal to its
score P(X | I) <= 1, so accepted samples follow P(X | X_past, I) up to
normalization.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Protocol

import numpy as np
from django.conf import settings

from evaluation.metrics import displacement_errors
from scene.camera import CameraModel
from scene.scoring import FootprintDisk, SceneScorer
from scene.segmentation import SegMap
from sceneintent.constants import DT, NOISE_DIM, STREAM_ACCEPT, STREAM_SELECTION
from sceneintent.exceptions import ConfigurationError, DataError, MissingGroundTruthError
from sceneintent.utils import make_rng
from trajectories.core import Pose2D, RelativeTrajectory, Trajectory, batch_to_world, to_absolute

from .gan import sample_noise

logger = logging.getLogger(__name__)

SELECTIONS = ('random', 'mean', 'min_k')


class Sampler(Protocol):
    def generate_batch(self, past: RelativeTrajectory, noise: np.ndarray) -> np.ndarray:
        """(n, noise_dim) noise -> (n, N, 2) agent-frame displacements."""


class Scorer(Protocol):
    def score_batch(self, positions: np.ndarray) -> np.ndarray:
        """(n, N, 2) world positions -> (n,) scores in [0, 1]."""


@dataclass(frozen=True)
class FusionConfig:
    k: int = 20
    max_proposals: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f'k must be at least 1, got {self.k}.')
        if self.max_proposals < self.k:
            raise ConfigurationError(
                f'max_proposals ({self.max_proposals}) must be at least k ({self.k}).'
            )

    @classmethod
    def from_settings(cls, overrides: Optional[Mapping[str, Any]] = None) -> 'FusionConfig':
        config = dict(settings.FUSION)
        config.update(overrides or {})
        return cls(**config)

    def as_dict(self) -> Dict[str, int]:
        return {'k': self.k, 'max_proposals': self.max_proposals, 'seed': self.seed}


@dataclass(frozen=True)
class PredictionSet:
    """
    Accepted world-frame futures with their scene scores and sampler statistics.

    ``accepted_count`` counts proposals that passed the acceptance test; with
    ``fallback_used`` the remaining rows were filled from the best rejected ones.
    """
    positions: np.ndarray
    scores: np.ndarray
    proposals_drawn: int
    accepted_count: int
    fallback_used: bool
    seed: int
    agent_pose: Pose2D
    requested_k: int
    dt: float = DT
    rejected_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 2)))
    rejected_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    method: str = 'fused'

    def __post_init__(self):
        if len(self.positions) != len(self.scores):
            raise DataError('Every accepted trajectory needs exactly one score.')
        if not self.fallback_used:
            if len(self.positions) != self.requested_k:
                raise DataError(
                    f'{len(self.positions)} trajectories for k={self.requested_k} without fallback.'
                )
            if np.any(self.scores <= 0):
                raise DataError('Accepted trajectories must have positive scores.')

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def accepted(self) -> List[Trajectory]:
        return [Trajectory(positions, self.dt) for positions in self.positions]

    @property
    def rejected(self) -> List[Trajectory]:
        return [Trajectory(positions, self.dt) for positions in self.rejected_positions]

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_count / self.proposals_drawn if self.proposals_drawn else 0.0

    def summary(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'k': self.requested_k,
            'returned': len(self),
            'accepted_count': self.accepted_count,
            'proposals_drawn': self.proposals_drawn,
            'acceptance_rate': self.acceptance_rate,
            'fallback_used': self.fallback_used,
            'seed': self.seed,
        }


def rejection_sample(
    sampler: Sampler,
    past: RelativeTrajectory,
    agent: Pose2D,
    scorer: Scorer,
    cfg: FusionConfig,
) -> PredictionSet:
    """
    Draw proposals from ``sampler`` and accept each with probability equal to its score.

    Noise comes from the same stream as ``sample_k(seed)``, consumed in blocks of
    k rows; acceptance uniforms come from an independent stream. Proposals are
    counted up to and including the k-th acceptance.
    """
    noise_rng = make_rng(cfg.seed)
    accept_rng = make_rng(cfg.seed, STREAM_ACCEPT)
    accepted_positions: List[np.ndarray] = []
    accepted_scores: List[np.ndarray] = []
    rejected_positions: List[np.ndarray] = []
    rejected_scores: List[np.ndarray] = []
    drawn = 0
    accepted = 0
    while accepted < cfg.k and drawn < cfg.max_proposals:
        block = min(cfg.k, cfg.max_proposals - drawn)
        noise = noise_rng.standard_normal((block, NOISE_DIM))
        positions = batch_to_world(sampler.generate_batch(past, noise), agent)
        scores = np.asarray(scorer.score_batch(positions), dtype=np.float64)
        hits = accept_rng.random(block) < scores
        running = np.cumsum(hits)
        needed = cfg.k - accepted
        used = block
        if running[-1] >= needed:
            used = int(np.searchsorted(running, needed)) + 1
        hits = hits[:used]
        accepted_positions.append(positions[:used][hits])
        accepted_scores.append(scores[:used][hits])
        rejected_positions.append(positions[:used][~hits])
        rejected_scores.append(scores[:used][~hits])
        accepted += int(hits.sum())
        drawn += used

    positions = np.concatenate(accepted_positions)
    scores = np.concatenate(accepted_scores)
    all_rejected = np.concatenate(rejected_positions)
    all_rejected_scores = np.concatenate(rejected_scores)
    fallback = accepted < cfg.k
    if fallback:
        order = np.argsort(-all_rejected_scores, kind='stable')
        if accepted == 0 and not np.any(all_rejected_scores > 0):
            fill = order[:cfg.k]
        else:
            fill = np.array(
                [i for i in order[:cfg.k - accepted] if all_rejected_scores[i] > 0], dtype=np.int64
            )
        positions = np.concatenate([positions, all_rejected[fill]])
        scores = np.concatenate([scores, all_rejected_scores[fill]])
        logger.warning(
            f"Proposal budget of {cfg.max_proposals} exhausted with {accepted}/{cfg.k} accepted; "
            f"filled {len(fill)} from the best rejected proposals"
        )
    return PredictionSet(
        positions=positions,
        scores=scores,
        proposals_drawn=drawn,
        accepted_count=accepted,
        fallback_used=fallback,
        seed=cfg.seed,
        agent_pose=agent,
        requested_k=cfg.k,
        dt=past.dt,
        rejected_positions=all_rejected[:cfg.k],
        rejected_scores=all_rejected_scores[:cfg.k],
    )


def fuse(
    model: Sampler,
    past: RelativeTrajectory,
    agent: Pose2D,
    seg: SegMap,
    cam: CameraModel,
    cfg: FusionConfig,
    foot_radius: Optional[float] = None,
) -> PredictionSet:
    """
    Scene-constrained prediction: rejection sampling against the traversability of ``seg`` seen by ``cam``.
    """
    radius = settings.SCENE['footprint_radius'] if foot_radius is None else foot_radius
    scorer = SceneScorer(seg, cam, FootprintDisk(agent.position, radius))
    prediction = rejection_sample(model, past, agent, scorer, cfg)
    logger.debug(
        f"Fused {len(prediction)} trajectories from {prediction.proposals_drawn} proposals "
        f"(acceptance {prediction.acceptance_rate:.3f})"
    )
    return prediction


def raw_prediction(model: Sampler, past: RelativeTrajectory, agent: Pose2D, k: int, seed: int) -> PredictionSet:
    """
    The first k generator samples of ``seed`` without scene information.
    """
    steps = model.generate_batch(past, sample_noise(k, seed))
    return PredictionSet(
        positions=batch_to_world(steps, agent),
        scores=np.ones(k),
        proposals_drawn=k,
        accepted_count=k,
        fallback_used=False,
        seed=seed,
        agent_pose=agent,
        requested_k=k,
        dt=past.dt,
        rejected_positions=np.zeros((0, steps.shape[1], 2)),
        rejected_scores=np.zeros(0),
        method='no_scene',
    )


def mean_trajectory(pred: PredictionSet) -> Trajectory:
    """
    Per-step mean of the displacement vectors, accumulated from the agent position.
    """
    origin = np.broadcast_to(pred.agent_pose.as_array(), (len(pred), 1, 2))
    steps = np.diff(np.concatenate([origin, pred.positions], axis=1), axis=1)
    return to_absolute(RelativeTrajectory(steps.mean(axis=0), pred.dt), pred.agent_pose.position)


def selection_order(n: int, rng_seed: Optional[int] = None) -> np.ndarray:
    """
    Order in which the samples of a set are drawn: a seeded uniform permutation,
    or the stored order without a seed.
    """
    if rng_seed is None:
        return np.arange(n)
    return make_rng(rng_seed, STREAM_SELECTION).permutation(n)


def select(
    pred: PredictionSet,
    strategy: str,
    ground_truth: Optional[Trajectory] = None,
    rng_seed: Optional[int] = None,
) -> Trajectory:
    """
    Reduce a prediction set to one trajectory.

    ``random`` takes the first sample of ``selection_order``: a seeded uniform draw
    with ``rng_seed``, the first accepted sample without. ``min_k`` needs ``ground_truth``.
    """
    if len(pred) == 0:
        raise DataError('Prediction set is empty.', code='empty_prediction')
    if strategy == 'random':
        index = int(selection_order(len(pred), rng_seed)[0])
        return Trajectory(pred.positions[index], pred.dt)
    if strategy == 'mean':
        return mean_trajectory(pred)
    if strategy == 'min_k':
        if ground_truth is None:
            raise MissingGroundTruthError()
        ade_values, _ = displacement_errors(pred.positions, ground_truth.positions)
        return Trajectory(pred.positions[int(np.argmin(ade_values))], pred.dt)
    raise ConfigurationError(f'Unknown selection strategy {strategy!r}; expected one of {SELECTIONS}.')
