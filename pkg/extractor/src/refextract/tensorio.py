"""Writer for the CPT1 tensor container.

This is the producer side of the wire format the evaluation engine
reads: magic ``CPT1``, a dtype byte (0 float32 LE, 1 uint8, 2 uint32
LE), an ndim byte, little-endian uint32 dims, then the raw row-major
payload.  The engine ships its own independent reader; the contract
tests compare the two byte for byte.

Files are written atomically: payload goes to a sibling temp file that
is renamed into place, so a crashed run never leaves a half-written
tensor under its final name.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import ExtractorError

MAGIC = b"CPT1"

_CODES = {
    np.dtype("float32"): 0,
    np.dtype("uint8"): 1,
    np.dtype("uint32"): 2,
}
_DTYPES = {code: dtype for dtype, code in _CODES.items()}


def encode_tensor(t: np.ndarray) -> bytes:
    """Serialize an array to CPT1 bytes."""
    t = np.asarray(t)
    if t.dtype not in _CODES:
        raise ExtractorError(f"cannot encode dtype {t.dtype}")
    if t.ndim == 0 or t.ndim > 255:
        raise ExtractorError(f"cannot encode ndim {t.ndim}")
    if min(t.shape) < 1:
        raise ExtractorError(f"cannot encode empty shape {t.shape}")
    header = MAGIC + bytes([_CODES[t.dtype], t.ndim])
    header += struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t).tobytes()


def write_atomic(data: bytes, path) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory."""
    path = Path(path)
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_tensor(t: np.ndarray, path) -> None:
    write_atomic(encode_tensor(t), path)


def read_tensor(path) -> np.ndarray:
    """Read back a tensor this module wrote.  Self-check use only; the
    engine's reader is the one with full diagnostics."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC or len(blob) < 6:
        raise ExtractorError(f"{path}: not a CPT1 file")
    code, ndim = blob[4], blob[5]
    dims_end = 6 + 4 * ndim
    shape = struct.unpack(f"<{ndim}I", blob[6:dims_end])
    dtype = _DTYPES[code]
    return np.frombuffer(blob[dims_end:], dtype=dtype).reshape(shape).copy()
