from django.apps import AppConfig


class SolversConfig(AppConfig):
    name = 'solvers'
    verbose_name = 'Exact and heuristic Kemeny solvers'
