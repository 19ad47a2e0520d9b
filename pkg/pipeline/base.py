"""
Shared plumbing of the pipeline management commands.
"""
import logging
import sys
from typing import Any, Dict, Mapping

from django.core.management.base import BaseCommand, CommandParser
from django.test.utils import override_settings

from sceneintent.constants import EXIT_USAGE
from sceneintent.decorators import handle_command_errors

from .config import RunConfig, resolve_config

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """
    Base for ``gen_dataset``, ``train``, ``predict`` and ``evaluate``.

    Subclasses add their own flags in ``add_command_arguments``, map them onto
    config sections in ``section_flags`` and do their work in ``run``. The
    resolved configuration is echoed to stdout and installed as the Django
    settings for the duration of ``run``.
    """
    requires_system_checks: list = []

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit('.', 1)[-1]

    def create_parser(self, prog_name: str, subcommand: str, **kwargs: Any) -> CommandParser:
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        raise_or_exit = parser.error

        def error(message: str) -> None:
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                parser.exit(EXIT_USAGE, f'{parser.prog}: error: {message}\n')
            raise_or_exit(message)

        parser.error = error
        return parser

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument('--config', help='JSON file with configuration values; flags win over it')
        parser.add_argument('--seed', type=int, help='Run seed, propagated to every seeded section')
        parser.add_argument('--k', type=int, help='Number of predicted trajectories')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--dataset', help='Dataset directory written by gen_dataset')
        parser.add_argument('--checkpoint', help='Training checkpoint file')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser: CommandParser) -> None:
        pass

    def section_flags(self, options: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
        """
        Command-specific flags as ``{section: {key: value}}``; ``None`` values are ignored.
        """
        return {}

    @handle_command_errors
    def handle(self, *args: Any, **options: Any) -> None:
        run = resolve_config(self.command_name, options, self.section_flags(options))
        self.stdout.write(run.echo())
        logger.info(f"Running {self.command_name} with seed={run.seed}")
        with override_settings(**run.settings_overrides()):
            self.run(run, options)

    def run(self, run: RunConfig, options: Mapping[str, Any]) -> None:
        raise NotImplementedError('Pipeline commands must implement run().')
