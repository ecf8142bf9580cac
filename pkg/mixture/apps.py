from django.apps import AppConfig


class MixtureConfig(AppConfig):
    name = 'mixture'
