from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class NeuralConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'neural'

    def ready(self):
        logger.debug("neural app ready")
