from django.apps import AppConfig


class RankingsConfig(AppConfig):
    name = 'rankings'
    verbose_name = 'Rankings, profiles and generators'
