from django import forms

from core.exceptions import InvalidConfigError
from core.seeding import SEED_MAX
from policy.model import ModelConfig
from policy.training import MixEntry, TrainConfig


class TrainConfigForm(forms.Form):
    """Validates a training config document (the JSON read by `train --config`)."""
    epochs = forms.IntegerField(min_value=0)
    steps_per_epoch = forms.IntegerField(min_value=1)
    batch_size = forms.IntegerField(min_value=1)
    alpha = forms.FloatField(min_value=0, max_value=1, required=False)
    learning_rate = forms.FloatField(min_value=0, required=False)
    distribution = forms.JSONField()
    validation_size = forms.IntegerField(min_value=2, required=False)
    seed = forms.IntegerField(min_value=0, max_value=SEED_MAX, required=False)
    model = forms.JSONField(required=False)
    dtype = forms.ChoiceField(choices=[('float32', 'float32'), ('float64', 'float64')], required=False)

    def clean_distribution(self):
        entries = self.cleaned_data['distribution']
        if not isinstance(entries, list):
            raise forms.ValidationError('must be a list of instance-distribution entries')
        parsed = []
        for index, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise forms.ValidationError(f"entry {index} must be an object")
            try:
                parsed.append(MixEntry(**entry))
            except TypeError as error:
                raise forms.ValidationError(f"entry {index}: {error}")
            except InvalidConfigError as error:
                raise forms.ValidationError(f"entry {index}: {error}")
        return tuple(parsed)

    def clean_model(self):
        model = self.cleaned_data.get('model')
        if model is None:
            return ModelConfig()
        if not isinstance(model, dict):
            raise forms.ValidationError('must be an object of model settings')
        try:
            return ModelConfig(**model)
        except (TypeError, InvalidConfigError) as error:
            raise forms.ValidationError(str(error))

    def clean(self):
        cleaned = super().clean()
        distribution, model = cleaned.get('distribution'), cleaned.get('model')
        if distribution and model and max(entry.m_max for entry in distribution) > model.max_m:
            self.add_error('distribution', f"voter counts exceed the model's max_m={model.max_m}")
        return cleaned

    def to_config(self) -> TrainConfig:
        data = self.cleaned_data
        optional = {name: data[name] for name in ('alpha', 'learning_rate', 'validation_size', 'seed', 'dtype')
                    if data.get(name) not in (None, '')}
        return TrainConfig(
            epochs=data['epochs'],
            steps_per_epoch=data['steps_per_epoch'],
            batch_size=data['batch_size'],
            distribution=data['distribution'],
            model=data['model'],
            **optional,
        )
