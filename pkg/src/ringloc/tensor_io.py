"""Flat little-endian float32 tensor files with a 16-byte header.

Header layout: 4-byte ASCII tag, then ``H``, ``W``, ``C`` as little-endian
uint32. The payload is ``H*W*C`` float32 values in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

TAG_BEV = b"RBEV"
TAG_SINOGRAM = b"RSGM"
TAG_TING = b"RTNG"
TAG_NTING = b"RNTG"

_HEADER = struct.Struct("<4sIII")


def write_tensor(path, array: np.ndarray, tag: bytes = TAG_BEV) -> Path:
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or len(tag) != 4:
        raise ValueError("need a 3D array and a 4-byte tag")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(tag, *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def read_tensor(path, expected_tag: bytes | None = None) -> tuple[np.ndarray, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    tag, h, w, c = _HEADER.unpack_from(raw)
    if expected_tag is not None and tag != expected_tag:
        raise FormatError(f"{path}: tag {tag!r}, expected {expected_tag!r}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * h * w * c:
        raise FormatError(f"{path}: payload has {len(body)} bytes, header implies {4 * h * w * c}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(float), tag
