"""Minimal STF1 tensor writer/reader.

Wire format (little-endian throughout): 4-byte magic "STF1", 1-byte dtype
code (0=f32, 1=i64, 2=u8), 1-byte ndim, 2 zero bytes, ndim u64 dims, raw
row-major payload. Deliberately free of any pipeline dependency so the
exporter stands alone; the consumer validates on its side.
"""

import numpy as np

MAGIC = b"STF1"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.int64): 1, np.dtype(np.uint8): 2}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8"), 2: np.dtype("u1")}


def write_tensor(path, array):
    arr = np.asarray(array)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    if arr.ndim == 0 or any(d < 1 for d in arr.shape):
        raise ValueError(f"invalid shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([code, arr.ndim, 0, 0]))
        fh.write(np.asarray(arr.shape, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path} is not an STF1 file")
    code, ndim = blob[4], blob[5]
    shape = tuple(int(d) for d in np.frombuffer(blob[8:8 + 8 * ndim], dtype="<u8"))
    return np.frombuffer(blob[8 + 8 * ndim:], dtype=_DTYPES[code]).reshape(shape).copy()
