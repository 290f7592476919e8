from django import forms

from core.seeding import SEED_MAX
from solvers.bench import ORACLES
from solvers.registry import METHODS


def _choices(values):
    return [(value, value) for value in values]


class SolveForm(forms.Form):
    method = forms.ChoiceField(choices=_choices(METHODS))
    seed = forms.IntegerField(min_value=0, max_value=SEED_MAX)
    top = forms.IntegerField(min_value=1, required=False)
    oracle = forms.ChoiceField(choices=_choices(ORACLES), required=False)
    checkpoint = forms.CharField(required=False)

    def clean(self):
        cleaned = super().clean()
        if cleaned.get('method') == 'transformer' and not cleaned.get('checkpoint'):
            self.add_error('checkpoint', 'required for the transformer method')
        return cleaned


class BenchForm(forms.Form):
    methods = forms.MultipleChoiceField(choices=_choices(METHODS))
    oracle = forms.ChoiceField(choices=_choices(ORACLES))
    format = forms.ChoiceField(choices=_choices(('csv', 'json')))
    seed = forms.IntegerField(min_value=0, max_value=SEED_MAX)
    workers = forms.IntegerField(min_value=1)
    checkpoint = forms.CharField(required=False)

    def clean(self):
        cleaned = super().clean()
        uses_transformer = 'transformer' in (cleaned.get('methods') or ()) or cleaned.get('oracle') == 'transformer'
        if uses_transformer and not cleaned.get('checkpoint'):
            self.add_error('checkpoint', 'required when the transformer is benchmarked')
        return cleaned
