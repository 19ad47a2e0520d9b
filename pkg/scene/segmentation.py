"""
Per-pixel class distributions and their binary file format.

    magic          8 bytes   b'SISEGMAP'
    version        uint32
    width, height  uint32
    classes        uint32    C
    class names    C times (uint16 length, UTF-8 bytes)
    traversable    uint32 count, then that many uint32 class indices
    probabilities  H*W*C float32, row-major, class-minor

All integers and floats are little-endian.
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings

from sceneintent.constants import SEGMAP_MAGIC, SEGMAP_VERSION
from sceneintent.exceptions import ConfigurationError, DataError, DataFormatError
from sceneintent.validators import validate_shape, validate_simplex
from trajectories.worlds import World

from .camera import CameraModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_HEADER = struct.Struct('<8sIIII')
_U16 = struct.Struct('<H')
_U32 = struct.Struct('<I')
_FLOAT = np.dtype('<f4')


@dataclass(frozen=True)
class SegMap:
    """
    ``probs[row, col, c]`` is the probability that pixel (col, row) shows class c.
    """
    probs: np.ndarray
    class_names: Tuple[str, ...]
    traversable_set: Tuple[int, ...]

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float32, copy=True)
        validate_shape(probs, (None, None, len(self.class_names)), 'segmentation probabilities')
        if not np.all(np.isfinite(probs)):
            raise DataError('Segmentation probabilities contain non-finite values.', code='non_finite')
        validate_simplex(probs)
        traversable = tuple(sorted({int(c) for c in self.traversable_set}))
        if any(c < 0 or c >= len(self.class_names) for c in traversable):
            raise DataError(
                f'Traversable classes {traversable} are not valid indices for '
                f'{len(self.class_names)} classes.',
                code='invalid_class',
            )
        probs.setflags(write=False)
        object.__setattr__(self, 'probs', probs)
        object.__setattr__(self, 'class_names', tuple(str(name) for name in self.class_names))
        object.__setattr__(self, 'traversable_set', traversable)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SegMap):
            return NotImplemented
        return (
            self.class_names == other.class_names
            and self.traversable_set == other.traversable_set
            and np.array_equal(self.probs, other.probs)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def traversable_probability(self) -> np.ndarray:
        """
        (H, W) float64 sum of the traversable class probabilities.
        """
        if not self.traversable_set:
            return np.zeros((self.height, self.width))
        return self.probs[:, :, list(self.traversable_set)].sum(axis=2, dtype=np.float64)


def scene_classes(config: Optional[Mapping[str, Any]] = None) -> Tuple[Tuple[str, ...], Tuple[int, ...]]:
    """
    Class names and traversable class indices from settings.SCENE (or ``config``).
    """
    config = config or settings.SCENE
    names = tuple(config['class_names'])
    missing = [name for name in config['traversable_classes'] if name not in names]
    if missing:
        raise ConfigurationError(f'Traversable classes {missing} are not in the class list.')
    return names, tuple(names.index(name) for name in config['traversable_classes'])


def one_hot_segmap(
    labels: np.ndarray, class_names: Sequence[str], traversable: Sequence[int], label_noise: float = 0.0
) -> SegMap:
    """
    SegMap from an (H, W) label image; ``label_noise`` of each pixel's mass is
    spread uniformly over the other classes.
    """
    if not 0.0 <= label_noise < 1.0:
        raise ConfigurationError(f'Label noise must lie in [0, 1), got {label_noise}.')
    count = len(class_names)
    if count == 1:
        label_noise = 0.0
    leak = label_noise / max(count - 1, 1)
    probs = np.full(labels.shape + (count,), leak, dtype=np.float64)
    np.put_along_axis(probs, labels[..., None].astype(np.int64), 1.0 - label_noise, axis=2)
    return SegMap(probs.astype(np.float32), tuple(class_names), tuple(traversable))


def _sidewalk_cells(mask: np.ndarray) -> np.ndarray:
    """
    Traversable cells with a blocked 4-neighbour.
    """
    blocked = ~mask
    near = np.zeros_like(mask)
    near[1:] |= blocked[:-1]
    near[:-1] |= blocked[1:]
    near[:, 1:] |= blocked[:, :-1]
    near[:, :-1] |= blocked[:, 1:]
    return mask & near


def render_synthetic_segmap(
    world: World,
    cam: CameraModel,
    label_noise: Optional[float] = None,
    config: Optional[Mapping[str, Any]] = None,
) -> SegMap:
    """
    Render what an ideal segmenter would see through ``cam``, softened by label noise.

    Pixels whose ray misses the ground are sky; ground outside the world extent is
    terrain; blocked cells are buildings; traversable cells next to a blocked one
    are sidewalk and the rest is road.
    """
    config = config or settings.SCENE
    names, traversable = scene_classes(config)
    noise = config['label_noise'] if label_noise is None else label_noise
    required = ('road', 'sidewalk', 'building', 'terrain', 'sky')
    if not set(required) <= set(names):
        raise ConfigurationError(f'Synthetic scenes need the classes {required}.')
    index = {name: names.index(name) for name in required}

    cols, rows = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    ground, hit = cam.back_project_many(np.column_stack([cols.ravel(), rows.ravel()]))
    labels = np.full(len(ground), index['sky'], dtype=np.int64)
    cell_rows, cell_cols, inside = world.cell_of(np.where(hit[:, None], ground, 0.0))
    inside &= hit
    labels[hit & ~inside] = index['terrain']
    mask = world.traversable_mask
    sidewalk = _sidewalk_cells(mask)
    r, c = cell_rows[inside], cell_cols[inside]
    labels[inside] = np.where(
        mask[r, c],
        np.where(sidewalk[r, c], index['sidewalk'], index['road']),
        index['building'],
    )
    return one_hot_segmap(labels.reshape(cam.height, cam.width), names, traversable, noise)


# Binary files

def encode_segmap(seg: SegMap) -> bytes:
    chunks = [_HEADER.pack(SEGMAP_MAGIC, SEGMAP_VERSION, seg.width, seg.height, seg.num_classes)]
    for name in seg.class_names:
        encoded = name.encode('utf-8')
        chunks.append(_U16.pack(len(encoded)) + encoded)
    chunks.append(_U32.pack(len(seg.traversable_set)))
    chunks.extend(_U32.pack(c) for c in seg.traversable_set)
    chunks.append(np.ascontiguousarray(seg.probs, dtype=_FLOAT).tobytes())
    return b''.join(chunks)


def decode_segmap(blob: bytes, source: str = '<bytes>') -> SegMap:
    try:
        magic, version, width, height, count = _HEADER.unpack_from(blob)
        if magic != SEGMAP_MAGIC:
            raise DataFormatError(f'Segmentation file {source} has bad magic {magic!r}.')
        if version != SEGMAP_VERSION:
            raise DataFormatError(f'Segmentation file {source} has unsupported version {version}.')
        offset = _HEADER.size
        names = []
        for _ in range(count):
            (length,) = _U16.unpack_from(blob, offset)
            offset += _U16.size
            names.append(blob[offset:offset + length].decode('utf-8'))
            offset += length
        (n_traversable,) = _U32.unpack_from(blob, offset)
        offset += _U32.size
        traversable = struct.unpack_from(f'<{n_traversable}I', blob, offset)
        offset += _U32.size * n_traversable
    except (struct.error, UnicodeDecodeError) as e:
        raise DataFormatError(f'Segmentation file {source} has a corrupt header: {e}') from e
    expected = width * height * count * _FLOAT.itemsize
    if len(blob) - offset != expected:
        raise DataFormatError(
            f'Segmentation file {source} holds {len(blob) - offset} data bytes, expected {expected}.'
        )
    probs = np.frombuffer(blob, dtype=_FLOAT, offset=offset).reshape(height, width, count)
    try:
        return SegMap(probs, tuple(names), tuple(traversable))
    except DataError as e:
        raise DataFormatError(f'Segmentation file {source} is invalid: {e.detail}') from e


def write_segmap(path: PathLike, seg: SegMap) -> None:
    Path(path).write_bytes(encode_segmap(seg))


def read_segmap(path: PathLike) -> SegMap:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f'Cannot read segmentation file {path}: {e}') from e
    return decode_segmap(blob, str(path))
