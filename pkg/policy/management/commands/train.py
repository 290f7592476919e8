import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from core import exit_codes
from core.commands import KemenyCommand
from policy.checkpoint import load_checkpoint, save_checkpoint
from policy.forms import TrainConfigForm
from policy.training import train


class Command(KemenyCommand):
    help = 'Trains the Kemeny Transformer with REINFORCE and a greedy-rollout baseline'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='JSON training config')
        parser.add_argument('--out', default=None, help='checkpoint path')
        parser.add_argument('--resume', default=None, help='checkpoint to resume from')
        parser.add_argument('--progress', default=None, help='also append progress records to this file')

    def run(self, *args, **options):
        try:
            document = json.loads(Path(options['config']).read_text())
        except json.JSONDecodeError as error:
            raise CommandError(f"{options['config']} is not valid JSON: {error}", returncode=exit_codes.USAGE)
        if not isinstance(document, dict):
            raise CommandError('a training config is a JSON object', returncode=exit_codes.USAGE)
        form = TrainConfigForm(data=document)
        unknown = sorted(set(document) - set(form.fields))
        if unknown:
            raise CommandError(f"unknown config fields: {', '.join(unknown)}", returncode=exit_codes.USAGE)
        if not form.is_valid():
            raise self.form_errors(form)
        config = form.to_config()

        out = Path(options['out'] or settings.KEMENY['OUTPUT_DIR'] / 'checkpoints' / 'policy.json')
        resume_from = load_checkpoint(options['resume'], expected_config=config.model) if options['resume'] else None

        progress = logging.getLogger('kemeny.progress')
        handler = None
        if options['progress']:
            handler = logging.FileHandler(options['progress'])
            handler.setFormatter(logging.Formatter('%(message)s'))
            progress.addHandler(handler)
        try:
            checkpoint, report = train(config, checkpoint_path=out, resume_from=resume_from)
        except KeyboardInterrupt:
            raise CommandError(f"Interrupted; resume with --resume {out}", returncode=exit_codes.PARTIAL_FAILURE)
        finally:
            if handler is not None:
                progress.removeHandler(handler)
                handler.close()

        save_checkpoint(checkpoint, out)
        if report.epochs:
            last = report.epochs[-1]
            self.stdout.write(f"Greedy validation cost {report.initial_validation_cost:.4f} -> "
                              f"{last.validation_cost:.4f} after {last.epoch} epochs")
        self.stdout.write(self.style.SUCCESS(f"Wrote checkpoint {out}"))
