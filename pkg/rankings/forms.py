from django import forms

from core.seeding import SEED_MAX
from rankings.generators import KINDS, GeneratorSpec


class GeneratorSpecForm(forms.Form):
    kind = forms.ChoiceField(choices=[(kind, kind) for kind in KINDS])
    n = forms.IntegerField(min_value=2)
    m = forms.IntegerField(min_value=1)
    seed = forms.IntegerField(min_value=0, max_value=SEED_MAX)
    repeat_count = forms.IntegerField(min_value=1, required=False)
    scale_M = forms.FloatField(required=False)
    swap_passes = forms.IntegerField(min_value=1, required=False)

    def clean(self):
        cleaned = super().clean()
        repeat_count, m = cleaned.get('repeat_count'), cleaned.get('m')
        if repeat_count is not None and m is not None and repeat_count > m:
            self.add_error('repeat_count', f"must not exceed m={m}")
        return cleaned

    def to_spec(self, seed=None) -> GeneratorSpec:
        data = self.cleaned_data
        return GeneratorSpec(
            kind=data['kind'],
            n=data['n'],
            m=data['m'],
            seed=data['seed'] if seed is None else seed,
            repeat_count=data.get('repeat_count'),
            scale_M=1.0 if data.get('scale_M') is None else data['scale_M'],
            swap_passes=data.get('swap_passes') or 1,
        )


class IngestForm(forms.Form):
    format = forms.ChoiceField(choices=[('features-csv', 'features-csv'), ('preflib-soc', 'preflib-soc')])
    directions = forms.CharField(required=False)

    def clean(self):
        cleaned = super().clean()
        if cleaned.get('format') == 'features-csv' and not cleaned.get('directions'):
            self.add_error('directions', 'required for features-csv input (comma-separated asc/desc)')
        return cleaned


class GenerateForm(GeneratorSpecForm):
    count = forms.IntegerField(min_value=1)
