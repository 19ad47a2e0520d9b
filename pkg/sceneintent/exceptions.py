from typing import Any, Dict, Optional

from .constants import EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE


class IntentError(Exception):
    """
    Base exception for all pipeline errors.
    """
    exit_code = EXIT_DATA
    default_detail = 'Pipeline error.'
    default_code = 'error'

    def __init__(self, detail: Optional[str] = None, code: Optional[str] = None):
        self.detail = detail or self.default_detail
        self.code = code or self.default_code
        super().__init__(self.detail)
        self.error_type = self.__class__.__name__

    def get_full_details(self) -> Dict[str, Any]:
        """
        Get detailed error information.
        """
        return {
            'type': self.error_type,
            'detail': self.detail,
            'code': self.code,
            'exit_code': self.exit_code,
        }


class ConfigurationError(IntentError):
    """
    Exception for invalid configuration or command usage.
    """
    exit_code = EXIT_USAGE
    default_detail = 'Invalid configuration.'
    default_code = 'configuration_error'


class DataError(IntentError):
    """
    Exception for invalid or missing input data.
    """
    exit_code = EXIT_DATA
    default_detail = 'Invalid data.'
    default_code = 'data_error'


class DegenerateInputError(DataError):
    default_detail = 'Input is too short or empty.'
    default_code = 'degenerate_input'


class ShapeMismatchError(DataError):
    default_detail = 'Array shapes do not agree.'
    default_code = 'shape_mismatch'


class GenerationError(DataError):
    default_detail = 'World generation failed.'
    default_code = 'generation_error'


class InsufficientDataError(DataError):
    default_detail = 'Not enough source logs.'
    default_code = 'insufficient_data'


class DataFormatError(DataError):
    """
    Exception for corrupt or unreadable files. The message names the file.
    """
    default_detail = 'Corrupt or unreadable file.'
    default_code = 'data_format_error'


class MissingInstanceError(DataError):
    default_detail = 'Instance not found.'
    default_code = 'missing_instance'


class MissingGroundTruthError(DataError):
    default_detail = 'This selection strategy needs a ground-truth trajectory.'
    default_code = 'missing_ground_truth'


class NumericalError(IntentError):
    """
    Exception for non-finite values met during computation.
    """
    exit_code = EXIT_NUMERICAL
    default_detail = 'Numerical failure.'
    default_code = 'numerical_error'


class NonFiniteGradientError(NumericalError):
    default_detail = 'Gradient contains non-finite values.'
    default_code = 'non_finite_gradient'


class TrainingDivergedError(NumericalError):
    """
    Raised when a training loss turns non-finite. Carries the last model that
    finished an epoch with finite losses.
    """
    default_detail = 'Training diverged.'
    default_code = 'training_diverged'

    def __init__(
        self,
        detail: Optional[str] = None,
        last_good: Any = None,
        epoch: int = 0,
        code: Optional[str] = None,
    ):
        super().__init__(detail, code)
        self.last_good = last_good
        self.epoch = epoch
