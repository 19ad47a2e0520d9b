from typing import Dict, Tuple

# Trajectory sampling
DT = 0.5  # seconds between waypoints
DT_TOLERANCE = 1e-9
OBS_LEN = 8  # M, past displacements
PRED_LEN = 8  # N, future displacements
WINDOW_SPAN = OBS_LEN + PRED_LEN  # positions spanned beyond the first one
NOISE_DIM = 8

# Numerics
BCE_EPSILON = 1e-7
GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_FLOOR = 1e-8
ADAM_DEFAULTS: Dict[str, float] = {
    'learning_rate': 1e-3,
    'beta1': 0.9,
    'beta2': 0.999,
    'epsilon': 1e-8,
}
FORGET_BIAS_INIT = 1.0

# Scene scoring
FOOTPRINT_SCORE = 1.0
OUTSIDE_VISIBLE_SCORE = 0.5
PROBABILITY_TOLERANCE = 1e-6
ROTATION_TOLERANCE = 1e-9

# Random stream identifiers (second element of a SeedSequence entropy list)
STREAM_NOISE = 0
STREAM_ACCEPT = 1
STREAM_LABELS = 2
STREAM_SHUFFLE = 3
STREAM_SELECTION = 4
STREAM_VALIDATION = 5

# File formats
PARAMS_MAGIC = b'SIPARAMS'
PARAMS_VERSION = 1
SEGMAP_MAGIC = b'SISEGMAP'
SEGMAP_VERSION = 1
LOG_HEADER = 't,x,y'
LOG_SIGNIFICANT_DIGITS = 9

# Exit codes
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

# Selection strategies and evaluated methods
SELECTIONS: Tuple[str, ...] = ('random', 'mean', 'min_k')
METHODS: Tuple[str, ...] = ('no_scene', 'fused')
METRICS: Tuple[str, ...] = ('ade', 'fde')
