"""
Paired comparison of the no-scene generator against scene-fused prediction.

Instance i of a run with seed s uses the derived seed SeedSequence([s, i]) for
both methods, so the fused sampler filters the very proposals the baseline
would have returned.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from forecasting.fusion import (
    FusionConfig,
    PredictionSet,
    Sampler,
    fuse,
    raw_prediction,
    select,
    selection_order,
)
from scene.catalog import SceneCatalog
from scene.scoring import FootprintDisk, SceneScorer
from sceneintent.constants import METHODS, METRICS, SELECTIONS
from sceneintent.decorators import log_execution_time
from sceneintent.exceptions import ConfigurationError, InsufficientDataError, NumericalError
from sceneintent.utils import derive_seed
from trajectories.windows import TrainInstance

from .metrics import ade, displacement_errors, fde

logger = logging.getLogger(__name__)

BASELINE, FUSED = METHODS

ErrorTable = Dict[str, Dict[str, Dict[str, float]]]


def instance_seed(seed: int, index: int) -> int:
    return derive_seed(seed, index)


def _radius(foot_radius: Optional[float]) -> float:
    return settings.SCENE['footprint_radius'] if foot_radius is None else float(foot_radius)


def paired_predictions(
    model: Sampler,
    instance: TrainInstance,
    catalog: SceneCatalog,
    k: int,
    max_proposals: int,
    seed: int,
    foot_radius: Optional[float] = None,
) -> Tuple[PredictionSet, PredictionSet]:
    """
    (no-scene, fused) predictions for one instance from the same noise stream.
    """
    seg, cam = catalog.get(instance)
    baseline = raw_prediction(model, instance.past, instance.agent_pose, k, seed)
    fused = fuse(
        model, instance.past, instance.agent_pose, seg, cam,
        FusionConfig(k=k, max_proposals=max_proposals, seed=seed), _radius(foot_radius),
    )
    return baseline, fused


@dataclass(frozen=True)
class InstanceResult:
    scene_id: str
    seed: int
    errors: ErrorTable
    acceptance_rate: float
    fallback_used: bool
    offroad_fraction: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scene_id': self.scene_id,
            'seed': self.seed,
            'errors': self.errors,
            'acceptance_rate': self.acceptance_rate,
            'fallback_used': self.fallback_used,
            'offroad_fraction': self.offroad_fraction,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'InstanceResult':
        return cls(
            scene_id=str(data['scene_id']),
            seed=int(data['seed']),
            errors={
                method: {
                    selection: {metric: float(value) for metric, value in cells.items()}
                    for selection, cells in by_selection.items()
                }
                for method, by_selection in data['errors'].items()
            },
            acceptance_rate=float(data['acceptance_rate']),
            fallback_used=bool(data['fallback_used']),
            offroad_fraction=float(data['offroad_fraction']),
        )


def evaluate_instance(
    model: Sampler,
    instance: TrainInstance,
    catalog: SceneCatalog,
    k: int,
    max_proposals: int,
    seed: int,
    foot_radius: Optional[float] = None,
) -> InstanceResult:
    truth = instance.future_world()
    baseline, fused = paired_predictions(model, instance, catalog, k, max_proposals, seed, foot_radius)
    errors: ErrorTable = {}
    for method, pred in ((BASELINE, baseline), (FUSED, fused)):
        errors[method] = {}
        for selection in SELECTIONS:
            chosen = select(pred, selection, truth, rng_seed=seed)
            errors[method][selection] = {'ade': ade(chosen, truth), 'fde': fde(chosen, truth)}
    seg, cam = catalog.get(instance)
    scorer = SceneScorer(seg, cam, FootprintDisk(instance.agent_pose.position, _radius(foot_radius)))
    return InstanceResult(
        scene_id=instance.scene_id,
        seed=seed,
        errors=errors,
        acceptance_rate=fused.acceptance_rate,
        fallback_used=fused.fallback_used,
        offroad_fraction=float(scorer.offroad(baseline.positions).mean()),
    )


def improvement(baseline: float, fused: float) -> float:
    """
    Percentage reduction of the fused error relative to the baseline error.
    """
    if baseline == 0:
        return 0.0
    return (baseline - fused) / baseline * 100.0


@dataclass(frozen=True)
class MetricReport:
    """
    Per-instance errors of both methods under every selection strategy.
    Aggregates are derived, so a report is fully described by its instances.
    """
    k: int
    seed: int
    max_proposals: int
    instances: Tuple[InstanceResult, ...] = field(default_factory=tuple)

    def mean(self, method: str, selection: str, metric: str) -> float:
        return float(np.mean([result.errors[method][selection][metric] for result in self.instances]))

    def means(self) -> ErrorTable:
        return {
            method: {
                selection: {metric: self.mean(method, selection, metric) for metric in METRICS}
                for selection in SELECTIONS
            }
            for method in METHODS
        }

    def improvements(self) -> Dict[str, Dict[str, float]]:
        return {
            selection: {
                metric: improvement(self.mean(BASELINE, selection, metric), self.mean(FUSED, selection, metric))
                for metric in METRICS
            }
            for selection in SELECTIONS
        }

    def cells(self) -> Iterator[Tuple[str, str, str, float]]:
        for method in METHODS:
            for selection in SELECTIONS:
                for metric in METRICS:
                    yield method, selection, metric, self.mean(method, selection, metric)

    @property
    def baseline_offroad_fraction(self) -> float:
        return float(np.mean([result.offroad_fraction for result in self.instances]))

    @property
    def mean_acceptance_rate(self) -> float:
        return float(np.mean([result.acceptance_rate for result in self.instances]))

    @property
    def fallback_count(self) -> int:
        return sum(result.fallback_used for result in self.instances)

    def check_finite(self) -> None:
        for method, selection, metric, value in self.cells():
            if not math.isfinite(value):
                raise NumericalError(f'{metric} of {method}/{selection} is not finite.')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'k': self.k,
            'seed': self.seed,
            'max_proposals': self.max_proposals,
            'instance_count': len(self.instances),
            'means': self.means(),
            'improvement_pct': self.improvements(),
            'baseline_offroad_fraction': self.baseline_offroad_fraction,
            'mean_acceptance_rate': self.mean_acceptance_rate,
            'fallback_count': self.fallback_count,
            'instances': [result.to_dict() for result in self.instances],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'MetricReport':
        return cls(
            k=int(data['k']),
            seed=int(data['seed']),
            max_proposals=int(data['max_proposals']),
            instances=tuple(InstanceResult.from_dict(item) for item in data['instances']),
        )


def _check_run(instances: Sequence[TrainInstance], k: int, max_proposals: int) -> None:
    if not instances:
        raise InsufficientDataError('No instances to evaluate.')
    if k < 1 or max_proposals < k:
        raise ConfigurationError(f'Need 1 <= k <= max_proposals, got k={k}, max_proposals={max_proposals}.')


@log_execution_time
def table_report(
    model: Sampler,
    instances: Sequence[TrainInstance],
    catalog: SceneCatalog,
    k: int = 20,
    seed: int = 0,
    max_proposals: int = 2000,
    foot_radius: Optional[float] = None,
) -> MetricReport:
    """
    All 12 error cells (2 methods x 3 selections x 2 metrics) over ``instances``.
    """
    _check_run(instances, k, max_proposals)
    results: List[InstanceResult] = []
    for index, instance in enumerate(instances):
        results.append(evaluate_instance(
            model, instance, catalog, k, max_proposals, instance_seed(seed, index), foot_radius
        ))
        if (index + 1) % 50 == 0:
            logger.info(f"Evaluated {index + 1}/{len(instances)} instances")
    report = MetricReport(k=k, seed=seed, max_proposals=max_proposals, instances=tuple(results))
    report.check_finite()
    logger.info(
        f"Report over {len(results)} instances: min_k ADE {report.mean(BASELINE, 'min_k', 'ade'):.4f} -> "
        f"{report.mean(FUSED, 'min_k', 'ade'):.4f}, baseline off-road {report.baseline_offroad_fraction:.3f}"
    )
    return report


@dataclass(frozen=True)
class MinKCurve:
    ks: Tuple[int, ...]
    ade_baseline: Tuple[float, ...]
    ade_fused: Tuple[float, ...]
    fde_baseline: Tuple[float, ...]
    fde_fused: Tuple[float, ...]

    def rows(self) -> Iterator[Tuple[int, float, float, float, float]]:
        return zip(self.ks, self.ade_baseline, self.ade_fused, self.fde_baseline, self.fde_fused)


def _running_min(values: np.ndarray, k_max: int) -> np.ndarray:
    """
    Best of the first k values for k = 1..k_max; short sets repeat their last minimum.
    """
    best = np.minimum.accumulate(values)
    return np.concatenate([best, np.full(k_max - len(best), best[-1])])[:k_max]


@log_execution_time
def min_k_curve(
    model: Sampler,
    instances: Sequence[TrainInstance],
    catalog: SceneCatalog,
    k_max: int = 20,
    seed: int = 0,
    max_proposals: int = 2000,
    foot_radius: Optional[float] = None,
) -> MinKCurve:
    """
    Mean best-of-k ADE and FDE for k = 1..k_max. Each k uses the first k samples,
    in selection order, of one k_max run, so the curves never increase and k = 1
    matches the random selection of the same seed.
    """
    _check_run(instances, k_max, max_proposals)
    sums = {key: np.zeros(k_max) for key in ('ade_baseline', 'ade_fused', 'fde_baseline', 'fde_fused')}
    for index, instance in enumerate(instances):
        truth = instance.future_world().positions
        run_seed = instance_seed(seed, index)
        pair = paired_predictions(model, instance, catalog, k_max, max_proposals, run_seed, foot_radius)
        for name, pred in zip(('baseline', 'fused'), pair):
            drawn = pred.positions[selection_order(len(pred), run_seed)]
            ade_values, fde_values = displacement_errors(drawn, truth)
            sums[f'ade_{name}'] += _running_min(ade_values, k_max)
            sums[f'fde_{name}'] += _running_min(fde_values, k_max)
    curve = {key: tuple(float(v) for v in total / len(instances)) for key, total in sums.items()}
    for key, values in curve.items():
        if not all(math.isfinite(v) for v in values):
            raise NumericalError(f'Curve {key} contains non-finite values.')
    return MinKCurve(ks=tuple(range(1, k_max + 1)), **curve)
