import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from termcolor import colored

logger = logging.getLogger(__name__)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Build a generator for ``seed``. Extra integers select an independent stream.
    """
    if not stream:
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def derive_seed(seed: int, *keys: int) -> int:
    """
    A 32-bit seed for the entity identified by ``keys`` under ``seed``.
    """
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def print_status(message: str, status: str = 'info') -> None:
    """Print colored status messages."""
    colors = {
        'success': 'green',
        'error': 'red',
        'warning': 'yellow',
        'info': 'cyan'
    }
    print(colored(message, colors.get(status, 'white')))


def canonical_json(data: Any) -> str:
    """
    Serialize to JSON with sorted keys so equal data gives equal bytes.
    """
    return json.dumps(data, sort_keys=True, indent=2)


def write_json(path: Union[str, Path], data: Any) -> None:
    Path(path).write_text(canonical_json(data) + '\n', encoding='utf-8')


def sha256_file(path: Union[str, Path]) -> str:
    """
    Hex digest of a file's contents.
    """
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def format_error(error_type: str, message: str) -> Dict[str, Any]:
    """
    Format consistent error payloads.
    """
    return {
        'error': {
            'type': error_type,
            'message': message,
        }
    }


def ensure_directory(path: Union[str, Path]) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory
