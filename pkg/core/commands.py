"""Base class for the toolkit's management commands."""
import logging

from django.core.management.base import BaseCommand, CommandError

from core import exit_codes
from core.exceptions import (
    CapacityError, CheckpointMismatchError, CheckpointError, IngestionError, InvalidInputError, KemenyError,
)

logger = logging.getLogger(__name__)


def exit_code_for(error) -> int:
    if isinstance(error, CapacityError):
        return exit_codes.CAPACITY
    if isinstance(error, CheckpointMismatchError):
        return exit_codes.CONFIG_MISMATCH
    if isinstance(error, (CheckpointError, IngestionError, OSError)):
        return exit_codes.IO_FAILURE
    if isinstance(error, InvalidInputError):
        return exit_codes.USAGE
    return exit_codes.PARTIAL_FAILURE


class KemenyCommand(BaseCommand):
    """Runs `run()` and turns toolkit errors into CommandError exit codes."""

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except (KemenyError, OSError) as error:
            logger.debug('command failed', exc_info=True)
            raise CommandError(str(error), returncode=exit_code_for(error)) from error

    def run(self, *args, **options):
        raise NotImplementedError

    def form_errors(self, form) -> CommandError:
        lines = [f"{field}: {' '.join(messages)}" for field, messages in form.errors.items()]
        return CommandError('; '.join(lines), returncode=exit_codes.USAGE)
