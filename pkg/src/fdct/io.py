"""Flat binary tensor files and 8-bit image previews.

Tensor file layout (little-endian)::

    8s   magic  b"FDCTTNSR"
    u32  format version
    u32  reserved (0)
    u64  rows
    u64  cols
    f32  rows * cols values, row-major
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

TENSOR_MAGIC = b"FDCTTNSR"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<8sII")
_DIMS = struct.Struct("<QQ")


class TensorFileError(ValueError):
    pass


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"tensor files hold 2-D arrays, got shape {arr.shape}")
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, 0) + _DIMS.pack(*arr.shape) + body


def decode_tensor(buf: bytes) -> np.ndarray:
    head = _HEADER.size + _DIMS.size
    if len(buf) < head:
        raise TensorFileError("tensor file shorter than its header")
    magic, version, _ = _HEADER.unpack_from(buf, 0)
    if magic != TENSOR_MAGIC:
        raise TensorFileError("not a tensor file (bad magic)")
    if version != TENSOR_VERSION:
        raise TensorFileError(f"unsupported tensor file version {version}")
    rows, cols = _DIMS.unpack_from(buf, _HEADER.size)
    if len(buf) - head != 4 * rows * cols:
        raise TensorFileError(f"payload length {len(buf) - head} does not match "
                              f"{rows}x{cols} float32 values")
    return np.frombuffer(buf, dtype="<f4", offset=head).reshape(rows, cols).astype(np.float64)


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path: str | Path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise TensorFileError(f"cannot read tensor file {path}: {exc.strerror}") from None
    return decode_tensor(buf)


def to_uint8(arr: np.ndarray, window: tuple[float, float] | None = None) -> np.ndarray:
    """Linear map of ``[lo, hi]`` onto 0..255 (defaults to the data range)."""
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = window if window is not None else (float(arr.min()), float(arr.max()))
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint8)
    scaled = (np.clip(arr, lo, hi) - lo) / (hi - lo)
    return np.round(scaled * 255.0).astype(np.uint8)


def write_preview(path: str | Path, arr: np.ndarray,
                  window: tuple[float, float] | None = None) -> None:
    """Save an 8-bit grayscale preview; the format follows the suffix (.png/.pgm)."""
    path = Path(path)
    fmt = {".png": "PNG", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"preview suffix must be .png or .pgm, got {path.suffix!r}")
    Image.fromarray(to_uint8(arr, window)).save(path, format=fmt)
