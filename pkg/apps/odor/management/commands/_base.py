"""
Shared plumbing for the odor management commands: exit codes and usage errors
"""
import json
import logging
import sys

from django.core.management.base import BaseCommand, CommandError

from odor.services.exceptions import (
    CheckpointError,
    ConfigError,
    DatasetError,
    GradientError,
    NumericError,
    OdorError,
    ShapeError,
    SmartsParseError,
    SmilesParseError,
)

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# First matching class wins
EXIT_CODES = (
    (ConfigError, EXIT_USAGE),
    (DatasetError, EXIT_DATA),
    (SmilesParseError, EXIT_DATA),
    (SmartsParseError, EXIT_DATA),
    (CheckpointError, EXIT_DATA),
    (NumericError, EXIT_NUMERIC),
    (GradientError, EXIT_NUMERIC),
    (ShapeError, EXIT_NUMERIC),
)


def exit_code_for(error: OdorError) -> int:
    for error_class, code in EXIT_CODES:
        if isinstance(error, error_class):
            return code
    return EXIT_USAGE


class OdorCommand(BaseCommand):
    """Runs :meth:`run` and turns service errors into exit codes"""

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        default_error = parser.error

        def usage_error(message):
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                parser.exit(EXIT_USAGE, f"{parser.prog}: error: {message}\n")
            default_error(message)

        parser.error = usage_error
        return parser

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except OdorError as e:
            code = exit_code_for(e)
            logger.error(f"{self.__class__.__module__.rsplit('.', 1)[-1]} failed ({type(e).__name__}): {e}")
            raise CommandError(str(e), returncode=code) from e

    def run(self, **options):
        raise NotImplementedError('subclasses of OdorCommand must provide a run() method')

    def write_json(self, data):
        self.stdout.write(json.dumps(data, indent=2, sort_keys=True))
