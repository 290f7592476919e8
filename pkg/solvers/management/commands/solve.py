import json
from dataclasses import replace
from pathlib import Path

from django.conf import settings

from core.commands import KemenyCommand
from core.exceptions import CapacityError
from policy.checkpoint import load_checkpoint
from rankings.instances import list_instances, read_instance
from solvers.bench import oracle_cost
from solvers.forms import SolveForm
from solvers.heuristics import DecorConfig
from solvers.registry import SolveOptions, solve


def solve_options(seed, checkpoint=None) -> SolveOptions:
    """Options for the registry with the project-wide defaults from settings."""
    kemeny = settings.KEMENY
    return SolveOptions(seed=seed, teleport=kemeny['MC4_TELEPORT'], tol=kemeny['MC4_TOL'],
                        max_iters=kemeny['MC4_MAX_ITERS'], decor=replace(DecorConfig(), seed=seed),
                        checkpoint=checkpoint)


class Command(KemenyCommand):
    help = 'Runs one aggregation method on an instance file or a directory of them'

    def add_arguments(self, parser):
        parser.add_argument('--method', required=True)
        parser.add_argument('--in', dest='source', required=True, help='instance file or directory')
        parser.add_argument('--out', default=None, help='JSON result file (default: print only)')
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--checkpoint', default=None)
        parser.add_argument('--top', type=int, default=None, help='print the top K item labels of each result')
        parser.add_argument('--oracle', default=None,
                            help='also report the gap to this oracle (exact, none or a method name)')

    def run(self, *args, **options):
        form = SolveForm(data={
            'method': options['method'],
            'seed': options['seed'] if options['seed'] is not None else settings.KEMENY['DEFAULT_SEED'],
            'top': options['top'],
            'oracle': options['oracle'],
            'checkpoint': options['checkpoint'],
        })
        if not form.is_valid():
            raise self.form_errors(form)
        data = form.cleaned_data
        method = data['method']

        checkpoint = load_checkpoint(data['checkpoint']) if data['checkpoint'] else None
        solve_with = solve_options(data['seed'], checkpoint)
        source = Path(options['source'])
        paths = list_instances(source) if source.is_dir() else [source]

        records = []
        for path in paths:
            profile = read_instance(path)
            if method == 'exact' and profile.n > settings.KEMENY['EXACT_MAX_N']:
                raise CapacityError(f"{path.name}: exact solving is limited to n <= "
                                    f"{settings.KEMENY['EXACT_MAX_N']}, instance has n={profile.n}")
            result = solve(method, profile, solve_with)
            record = {
                'instance': path.name,
                'method': method,
                'ranking': list(result.ranking.order),
                'cost': float(result.cost),
                'cost_exact': f"{result.cost.numerator}/{result.cost.denominator}",
                'seconds': result.elapsed,
            }
            reference = None
            if data['oracle']:
                reference = oracle_cost(data['oracle'], profile, solve_with, {method: result})
            if reference is not None:
                label, floor, exact = reference
                record.update(oracle=label, gap=float(result.cost - floor), gap_exact=exact)
            records.append(record)

            line = f"{path.name}: {method} cost {float(result.cost):.4f} in {result.elapsed:.4f}s"
            if 'gap' in record:
                line += f" gap {record['gap']:.4f}"
            if data['top']:
                line += ' top: ' + ', '.join(profile.label(item) for item in result.ranking.order[:data['top']])
            self.stdout.write(line)

        if options['out']:
            out = Path(options['out'])
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(json.dumps(records, sort_keys=True, indent=2) + '\n')
            self.stdout.write(f'Wrote {out}')
        self.stdout.write(self.style.SUCCESS(f"Solved {len(records)} instances with {method}"))
