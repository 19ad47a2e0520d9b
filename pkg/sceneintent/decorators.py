import time
import functools
from typing import Callable
from django.core.management.base import CommandError
from .exceptions import IntentError
from .utils import format_error
import logging

logger = logging.getLogger(__name__)


def log_execution_time(func: Callable) -> Callable:
    """
    Decorator to log function execution time.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        end_time = time.perf_counter()

        logger.info(
            f"Function {func.__name__} took {(end_time - start_time):.2f} seconds to execute"
        )
        return result
    return wrapper


def handle_command_errors(func: Callable) -> Callable:
    """
    Decorator turning pipeline errors into CommandError with the matching exit code.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except IntentError as e:
            logger.error(f"Command failed: {format_error(e.error_type, e.detail)}")
            logger.debug(f"Error details: {e.get_full_details()}")
            raise CommandError(f"{e.error_type}: {e.detail}", returncode=e.exit_code) from e
    return wrapper
