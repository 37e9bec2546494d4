from django.apps import AppConfig


class KineticsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'kinetics'
    verbose_name = 'Full and limit kinetic solvers'
