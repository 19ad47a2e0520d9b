from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class TrajectoriesConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'trajectories'

    def ready(self):
        logger.debug("trajectories app ready")
