from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class ForecastingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'forecasting'

    def ready(self):
        logger.debug("forecasting app ready")
