from django.apps import AppConfig


class CaptureRecaptureConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'capture_recapture'
    verbose_name = 'Capture-recapture estimation'
