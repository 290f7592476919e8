from django.apps import AppConfig


class PolicyConfig(AppConfig):
    name = 'policy'
    verbose_name = 'Kemeny Transformer policy and training'
