from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class SceneConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'scene'

    def ready(self):
        logger.debug("scene app ready")
