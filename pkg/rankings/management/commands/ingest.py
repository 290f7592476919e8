from pathlib import Path

from core.commands import KemenyCommand
from rankings.forms import IngestForm
from rankings.ingest import read_metric_table, read_soc, rankings_from_metric_table
from rankings.instances import write_instance


class Command(KemenyCommand):
    help = 'Converts a metric table (features-csv) or a PrefLib soc file into an instance file'

    def add_arguments(self, parser):
        parser.add_argument('--format', required=True)
        parser.add_argument('--in', dest='source', required=True)
        parser.add_argument('--directions', default=None,
                            help='comma-separated asc/desc, one per metric column (features-csv only)')
        parser.add_argument('--out', required=True)

    def run(self, *args, **options):
        form = IngestForm(data={'format': options['format'], 'directions': options['directions']})
        if not form.is_valid():
            raise self.form_errors(form)

        source = Path(options['source'])
        if form.cleaned_data['format'] == 'features-csv':
            table = read_metric_table(source)
            profile = rankings_from_metric_table(table, form.cleaned_data['directions'])
        else:
            profile = read_soc(source)
        profile.provenance['path'] = str(source)

        path = write_instance(profile, options['out'])
        self.stdout.write(self.style.SUCCESS(
            f'Ingested {profile.m} rankings over {profile.n} items from {source} into {path}'))
