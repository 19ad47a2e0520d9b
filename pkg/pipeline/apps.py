from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class PipelineConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'pipeline'

    def ready(self):
        logger.debug("pipeline app ready")
