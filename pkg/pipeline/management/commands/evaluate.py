"""
Compare the no-scene generator with scene-fused prediction on the test split.
"""
import logging
from typing import Any, Dict, Mapping

from django.core.management.base import CommandParser

from evaluation.harness import min_k_curve, table_report
from evaluation.reports import write_reports
from forecasting.serializers import read_model
from pipeline.base import PipelineCommand
from pipeline.config import RunConfig
from scene.catalog import SceneCatalog
from sceneintent.constants import METRICS, SELECTIONS
from sceneintent.utils import print_status
from trajectories.serializers import load_dataset, load_worlds

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Write the error table, the full report and the best-of-k curve for the test split'

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument('--k-max', type=int, dest='k_max', help='Largest k of the best-of-k curve')
        parser.add_argument('--limit', type=int, help='Evaluate only the first N test instances')

    def section_flags(self, options: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
        return {'evaluation': {'k_max': options.get('k_max'), 'max_instances': options.get('limit')}}

    def run(self, run: RunConfig, options: Mapping[str, Any]) -> None:
        dataset_dir = run.path('dataset')
        model = read_model(run.path('checkpoint'))
        instances = load_dataset(dataset_dir).test
        evaluation = run.sections['evaluation']
        if evaluation['max_instances']:
            instances = instances[:evaluation['max_instances']]
        catalog = SceneCatalog(load_worlds(dataset_dir), dataset_dir)
        max_proposals = run.sections['fusion']['max_proposals']
        out = run.output_directory()
        run.write(out)

        report = table_report(
            model, instances, catalog,
            k=evaluation['k'], seed=evaluation['seed'], max_proposals=max_proposals,
        )
        curve = min_k_curve(
            model, instances, catalog,
            k_max=evaluation['k_max'], seed=evaluation['seed'], max_proposals=max_proposals,
        )
        write_reports(out, report, curve)

        improvements = report.improvements()
        print_status(f"✓ Evaluated {len(report.instances)} test instances into {out}", 'success')
        for selection in SELECTIONS:
            cells = ', '.join(f"{metric} {improvements[selection][metric]:+.2f}%" for metric in METRICS)
            print_status(f"{selection}: {cells}", 'info')
        print_status(
            f"baseline off-road {report.baseline_offroad_fraction:.3f}, "
            f"acceptance {report.mean_acceptance_rate:.3f}, fallbacks {report.fallback_count}",
            'info',
        )
