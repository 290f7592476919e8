import json
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from core import exit_codes
from core.commands import KemenyCommand
from policy.checkpoint import load_checkpoint
from policy.model import ModelConfig, init_params
from rankings.instances import list_instances, read_instance
from solvers.bench import run_bench, run_scaling, write_report
from solvers.forms import BenchForm
from solvers.management.commands.solve import solve_options


class Command(KemenyCommand):
    help = 'Benchmarks aggregation methods on a dataset directory and writes an Obj/Gap report'

    def add_arguments(self, parser):
        parser.add_argument('--methods', default='exact,kiwisort,mc4,max-agreement,min-regret,decor',
                            help='comma-separated method names')
        parser.add_argument('--dataset', default=None, help='directory of instance files')
        parser.add_argument('--oracle', default='exact')
        parser.add_argument('--report', default=None, help='report path (default: OUTPUT_DIR/bench.<format>)')
        parser.add_argument('--format', default='csv')
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--checkpoint', default=None)
        parser.add_argument('--workers', type=int, default=None)
        parser.add_argument('--scaling', action='store_true',
                            help='measure rollout multiply-accumulates and DP vs transformer time growth instead')

    def run(self, *args, **options):
        form = BenchForm(data={
            'methods': [method.strip() for method in options['methods'].split(',') if method.strip()],
            'oracle': options['oracle'],
            'format': options['format'],
            'seed': options['seed'] if options['seed'] is not None else settings.KEMENY['DEFAULT_SEED'],
            'workers': options['workers'] or settings.KEMENY['WORKERS'],
            'checkpoint': options['checkpoint'],
        })
        if not form.is_valid():
            raise self.form_errors(form)
        data = form.cleaned_data
        checkpoint = load_checkpoint(data['checkpoint']) if data['checkpoint'] else None
        report_path = Path(options['report'] or settings.KEMENY['OUTPUT_DIR'] / f"bench.{data['format']}")

        if options['scaling']:
            return self.scaling(checkpoint, data['seed'], report_path.with_suffix('.scaling.json'))

        if not options['dataset']:
            raise CommandError('--dataset is required unless --scaling is given', returncode=exit_codes.USAGE)
        instances = [(path.name, read_instance(path)) for path in list_instances(options['dataset'])]
        report = run_bench(instances, data['methods'], data['oracle'], solve_options(data['seed'], checkpoint),
                           workers=data['workers'])
        for path in write_report(report, report_path, data['format']):
            self.stdout.write(f'Wrote {path}')

        for row in report.summary:
            gap = '-' if row['mean_gap'] is None else f"{row['mean_gap']:.4f}"
            obj = '-' if row['mean_obj'] is None else f"{row['mean_obj']:.4f}"
            self.stdout.write(f"{row['method']:>14}  Obj {obj}  Gap {gap}  failures {row['failures']}")
        if report.failures:
            raise CommandError(f"{report.failures} method runs failed; see the error column of {report_path}",
                               returncode=exit_codes.PARTIAL_FAILURE)
        self.stdout.write(self.style.SUCCESS(f"Benchmarked {len(instances)} instances"))

    def scaling(self, checkpoint, seed, out):
        if checkpoint is not None:
            params, config = checkpoint.params, checkpoint.config
        else:
            config = ModelConfig()
            params = init_params(config, seed=seed)
        result = run_scaling(params, config, seed=seed)
        growth = result.growth
        document = {
            'ns': list(result.ns),
            'macs': list(result.macs),
            'fit': {'quadratic': result.fit.quadratic, 'linear': result.fit.linear, 'r2': result.fit.r2},
            'growth': {'n_small': growth.n_small, 'n_large': growth.n_large,
                       'exact_seconds': list(growth.exact_seconds),
                       'transformer_seconds': list(growth.transformer_seconds), 'ratio': growth.ratio},
        }
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(document, sort_keys=True, indent=2) + '\n')
        self.stdout.write(f"Rollout MACs fit {result.fit.quadratic:.1f} n^2 + {result.fit.linear:.1f} n, "
                          f"R^2 {result.fit.r2:.6f}")
        self.stdout.write(f"Exact DP grew {growth.exact_growth:.1f}x, transformer {growth.transformer_growth:.1f}x "
                          f"from n={growth.n_small} to n={growth.n_large}")
        self.stdout.write(self.style.SUCCESS(f'Wrote {out}'))
