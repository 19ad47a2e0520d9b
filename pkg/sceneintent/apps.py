from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class SceneIntentConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'sceneintent'
    verbose_name = 'Scene-constrained intention prediction'

    def ready(self):
        """
        Log the numeric configuration once the project is loaded.
        """
        import numpy as np

        logger.debug(f"sceneintent initialized with numpy {np.__version__}")
