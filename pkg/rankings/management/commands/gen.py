from pathlib import Path

from django.conf import settings

from core.commands import KemenyCommand
from core.seeding import derive_seed
from rankings.forms import GenerateForm
from rankings.generators import generate
from rankings.instances import instance_name, write_instance


class Command(KemenyCommand):
    help = 'Generates seeded synthetic ranking profiles (random, repeat, jiggling) as instance files'

    def add_arguments(self, parser):
        parser.add_argument('--type', dest='kind', required=True)
        parser.add_argument('--n', type=int, required=True)
        parser.add_argument('--m', type=int, required=True)
        parser.add_argument('--count', type=int, default=1)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--repeat-count', type=int, default=None)
        parser.add_argument('--scale-m', type=float, default=None)
        parser.add_argument('--swap-passes', type=int, default=None)
        parser.add_argument('--out', default=None)

    def run(self, *args, **options):
        form = GenerateForm(data={
            'kind': options['kind'],
            'n': options['n'],
            'm': options['m'],
            'count': options['count'],
            'seed': options['seed'] if options['seed'] is not None else settings.KEMENY['DEFAULT_SEED'],
            'repeat_count': options['repeat_count'],
            'scale_M': options['scale_m'],
            'swap_passes': options['swap_passes'],
        })
        if not form.is_valid():
            raise self.form_errors(form)

        out = Path(options['out'] or settings.KEMENY['OUTPUT_DIR'] / 'instances')
        base = form.to_spec()
        count = form.cleaned_data['count']
        for index in range(count):
            # each instance gets its own stream partitioned from the run seed
            spec = form.to_spec(seed=derive_seed(base.seed, index))
            path = write_instance(generate(spec), out / instance_name(base.kind, base.n, base.m, base.seed, index))
            self.stdout.write(f'Wrote {path}')

        self.stdout.write(self.style.SUCCESS(f"Generated {count} {base.kind} instances in {out}"))
