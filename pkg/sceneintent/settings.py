from pathlib import Path
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing here is served.
SECRET_KEY = os.getenv('SECRET_KEY', 'sceneintent-offline')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS: list = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    # Third party apps
    'rest_framework',
    # Local apps
    'sceneintent.apps.SceneIntentConfig',
    'trajectories',
    'neural',
    'scene',
    'forecasting',
    'evaluation',
    'pipeline',
]

# The pipeline is file based; an in-memory database keeps Django's checks quiet.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Seeds
DEFAULT_SEED = int(os.getenv('SCENEINTENT_SEED', '7'))

# Synthetic world generation
WORLD_GENERATION = {
    'extent': [40.0, 40.0],
    'resolution': 0.5,
    'obstacle_density': 0.3,
    'layout': 'scatter',
    'min_obstacle_size': 1.5,
    'max_obstacle_size': 5.0,
    'block_size': 10.0,
    'street_width': 4.0,
    'junction_road_width': 4.0,
}

# Synthetic driver (waypoint-following unicycle)
DRIVING = {
    'policy': 'route',
    'duration': 150.0,
    'min_speed': 1.0,
    'max_speed': 2.0,
    'max_turn_rate': 1.0,
    'heading_noise': 0.05,
    'lookahead': 1.5,
    'stop_probability': 0.02,
    'stop_steps': [2, 6],
    'goal_tolerance': 1.0,
}

# Datasets written by gen_dataset: one entry per world, each with its own run count.
DATASET = {
    'worlds': [
        {'layout': 'blocks', 'runs': 4},
        {'layout': 'junction', 'runs': 8},
    ],
    'ratios': [4, 1, 1],
    'scene_splits': ['test'],
}

# Segmentation and traversability
SCENE = {
    'class_names': [
        'road', 'sidewalk', 'building', 'wall', 'fence', 'pole',
        'traffic light', 'traffic sign', 'vegetation', 'terrain', 'sky',
        'person', 'rider', 'car', 'truck', 'bus', 'train', 'motorcycle', 'bicycle',
    ],
    'traversable_classes': ['road', 'sidewalk'],
    'label_noise': 0.1,
    'footprint_radius': 0.5,
}

# Forward-facing camera on the vehicle
CAMERA_MOUNT = {
    'height': 1.2,
    'pitch': 0.3,
    'forward_offset': 0.0,
    'width': 96,
    'height_px': 72,
    'focal': 60.0,
}

# Conditional GAN
GAN_ARCHITECTURE = {
    'embed_dim': 16,
    'encoder_hidden': 32,
    'decoder_hidden': 40,
    'discriminator_hidden': 32,
    'noise_dim': 8,
    'obs_len': 8,
    'pred_len': 8,
}

TRAINING = {
    'epochs': 200,
    'batch_size': 64,
    'k_variety': 20,
    'lr_generator': 1e-3,
    'lr_discriminator': 1e-3,
    'real_label_range': [0.7, 1.0],
    'fake_label_range': [0.0, 0.3],
    'variety_weight': 1.0,
    'validation_k': 20,
    'seed': DEFAULT_SEED,
}

FUSION = {
    'k': 20,
    'max_proposals': 2000,
    'seed': DEFAULT_SEED,
}

EVALUATION = {
    'k': 20,
    'k_max': 20,
    'seed': DEFAULT_SEED,
    # 0 evaluates the whole test split
    'max_instances': 0,
}

# Logging
LOG_LEVEL = os.getenv('SCENEINTENT_LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('SCENEINTENT_LOG_FILE', '')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        name: {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        }
        for name in (
            'sceneintent', 'trajectories', 'neural', 'scene',
            'forecasting', 'evaluation', 'pipeline',
        )
    },
}

if LOG_FILE:
    LOGGING['handlers']['file'] = {
        'level': LOG_LEVEL,
        'class': 'logging.handlers.RotatingFileHandler',
        'filename': LOG_FILE,
        'maxBytes': 1024 * 1024 * 5,  # 5 MB
        'backupCount': 5,
        'formatter': 'verbose',
    }
    for logger_config in LOGGING['loggers'].values():
        logger_config['handlers'].append('file')
