from django.apps import AppConfig


class OdorConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "odor"
    verbose_name = "Odor prediction"
