from django.apps import AppConfig


class SimulationsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'simulations'
    verbose_name = 'Run configuration and commands'

    def ready(self):
        from chemotaxis_lab.config import validate_configuration_on_startup
        validate_configuration_on_startup()
