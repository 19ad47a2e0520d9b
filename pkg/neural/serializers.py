"""
Binary parameter files.

    magic        8 bytes  b'SIPARAMS'
    version      uint32   little-endian
    header size  uint64   little-endian
    header       UTF-8 JSON: {"meta": {...}, "sections": [{"name", "tensors": [{"name", "shape"}]}]}
    data         float64 little-endian, tensors in header order, row-major
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from sceneintent.constants import PARAMS_MAGIC, PARAMS_VERSION
from sceneintent.exceptions import DataFormatError

from .layers import Params

Sections = Dict[str, Params]

_PREAMBLE = struct.Struct('<8sIQ')
_FLOAT = np.dtype('<f8')


def encode_params(sections: Mapping[str, Params], meta: Optional[Mapping[str, Any]] = None) -> bytes:
    header: Dict[str, Any] = {'meta': dict(meta or {}), 'sections': []}
    chunks = []
    for section in sorted(sections):
        tensors = []
        for name in sorted(sections[section]):
            array = np.asarray(sections[section][name], dtype=np.float64)
            tensors.append({'name': name, 'shape': list(array.shape)})
            chunks.append(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())
        header['sections'].append({'name': section, 'tensors': tensors})
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return _PREAMBLE.pack(PARAMS_MAGIC, PARAMS_VERSION, len(header_bytes)) + header_bytes + b''.join(chunks)


def decode_params(blob: bytes, source: str = '<bytes>') -> Tuple[Sections, Dict[str, Any]]:
    if len(blob) < _PREAMBLE.size:
        raise DataFormatError(f'Parameter file {source} is truncated.')
    magic, version, header_size = _PREAMBLE.unpack_from(blob)
    if magic != PARAMS_MAGIC:
        raise DataFormatError(f'Parameter file {source} has bad magic {magic!r}.')
    if version != PARAMS_VERSION:
        raise DataFormatError(f'Parameter file {source} has unsupported version {version}.')
    start = _PREAMBLE.size
    try:
        header = json.loads(blob[start:start + header_size].decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as e:
        raise DataFormatError(f'Parameter file {source} has a corrupt header: {e}') from e

    offset = start + header_size
    sections: Sections = {}
    try:
        for section in header['sections']:
            tensors: Params = {}
            for tensor in section['tensors']:
                shape = tuple(int(n) for n in tensor['shape'])
                count = int(np.prod(shape, dtype=np.int64))
                end = offset + count * _FLOAT.itemsize
                if end > len(blob):
                    raise DataFormatError(f'Parameter file {source} is truncated.')
                data = np.frombuffer(blob, dtype=_FLOAT, count=count, offset=offset)
                tensors[tensor['name']] = data.astype(np.float64).reshape(shape)
                offset = end
            sections[section['name']] = tensors
    except (KeyError, TypeError) as e:
        raise DataFormatError(f'Parameter file {source} has a malformed header: {e}') from e
    if offset != len(blob):
        raise DataFormatError(f'Parameter file {source} has {len(blob) - offset} trailing bytes.')
    return sections, header.get('meta', {})


def write_params(path: Union[str, Path], sections: Mapping[str, Params], meta: Optional[Mapping[str, Any]] = None) -> None:
    Path(path).write_bytes(encode_params(sections, meta))


def read_params(path: Union[str, Path]) -> Tuple[Sections, Dict[str, Any]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f'Cannot read parameter file {path}: {e}') from e
    return decode_params(blob, str(path))
