from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class EvaluationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'evaluation'

    def ready(self):
        logger.debug("evaluation app ready")
