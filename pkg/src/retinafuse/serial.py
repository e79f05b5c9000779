"""Header-plus-blob model files.

Layout (integers little-endian)::

    8 bytes   magic
    4 bytes   uint32 header length H
    H bytes   UTF-8 JSON header; its "arrays" entry lists [name, dtype, shape]
    rest      the arrays in header order, C-contiguous, little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ModelFormatError


def write_blobfile(path, magic: bytes, header: dict, arrays: dict, dtype="<f8") -> None:
    assert len(magic) == 8
    header = dict(header)
    header["arrays"] = [[name, dtype, list(np.shape(a))] for name, a in arrays.items()]
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in arrays.values())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(magic + struct.pack("<I", len(hbytes)) + hbytes + blob)
    tmp.replace(path)


def read_blobfile(path, magic: bytes):
    """Return ``(header, arrays)``; raises :class:`ModelFormatError`."""
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"{path}: model file not found")
    data = path.read_bytes()
    if data[:8] != magic:
        raise ModelFormatError(f"{path}: wrong file type (bad magic)")
    try:
        (hlen,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12 : 12 + hlen])
        offset = 12 + hlen
        arrays = {}
        for name, dtype, shape in header.pop("arrays"):
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            arrays[name] = arr.reshape(shape).astype(np.dtype(dtype).newbyteorder("="))
            offset += arr.nbytes
    except (struct.error, ValueError, KeyError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from exc
    if offset != len(data):
        raise ModelFormatError(f"{path}: trailing or missing bytes")
    return header, arrays
