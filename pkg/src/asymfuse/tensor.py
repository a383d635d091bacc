"""Dense float32 tensors: broadcasting, norms and ``.tsr`` file I/O.

Tensors are plain C-contiguous ``numpy.float32`` arrays (row-major flat
storage plus a shape). Every operation here is a pure function: inputs
are never mutated and results are freshly allocated. Reductions
accumulate in float64 and round to float32 once, at the end.
"""

from __future__ import annotations

import itertools
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, RankError, ShapeMismatchError, ZeroVectorError

DTYPE = np.float32

_MAGIC = b"TSRF"
_VERSION = 1
_CODE_F32 = 1
_HEADER = struct.Struct("<III")  # version, dtype code, ndim


def as_tensor(values) -> np.ndarray:
    """Coerce ``values`` to a C-contiguous float32 array (rank preserved)."""
    arr = np.asarray(values, dtype=DTYPE, order="C")
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def broadcast_shape(shape_a, shape_b) -> tuple[int, ...]:
    """Resolve two shapes under trailing-dimension alignment.

    Dimensions are compared right-to-left; a pair is compatible when the
    sizes match or either side is 1. Missing leading dimensions count
    as 1.

    Raises:
        ShapeMismatchError: some aligned pair differs with neither side 1.
    """
    merged = []
    pairs = itertools.zip_longest(reversed(tuple(shape_a)), reversed(tuple(shape_b)), fillvalue=1)
    for dim_a, dim_b in pairs:
        if dim_a != dim_b and dim_a != 1 and dim_b != 1:
            raise ShapeMismatchError(
                f"cannot broadcast {tuple(shape_a)} with {tuple(shape_b)}"
            )
        merged.append(max(dim_a, dim_b))
    return tuple(reversed(merged))


def broadcast_add(a, b) -> np.ndarray:
    """Elementwise sum with size-1 dimensions virtually replicated."""
    a = as_tensor(a)
    b = as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return a + b


def relu(t) -> np.ndarray:
    """max(t, 0), elementwise."""
    return np.maximum(as_tensor(t), DTYPE(0))


def l1_map(t) -> np.ndarray:
    """Collapse a C x H x W map to H x W by summing |t| over channels."""
    t = as_tensor(t)
    if t.ndim != 3:
        raise RankError(f"l1_map expects a rank-3 map, got rank {t.ndim}")
    return np.abs(t.astype(np.float64)).sum(axis=0).astype(DTYPE)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two equal-length vectors.

    Raises:
        RankError: an argument is not rank 1.
        ShapeMismatchError: lengths differ.
        ZeroVectorError: either vector has zero norm.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise RankError("cosine_similarity expects rank-1 vectors")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    norm_a = float(np.sqrt(a64 @ a64))
    norm_b = float(np.sqrt(b64 @ b64))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for zero vectors")
    value = float(a64 @ b64) / (norm_a * norm_b)
    return max(-1.0, min(1.0, value))


def tensor_write(t, path) -> None:
    """Serialize a tensor to ``path`` in the .tsr format.

    Layout, all little-endian: magic ``b"TSRF"``, u32 version (1), u32
    dtype code (1 = float32), u32 ndim, u32 dims[ndim], then the raw
    row-major float32 payload. No padding or trailing bytes.
    """
    t = as_tensor(t)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(_VERSION, _CODE_F32, t.ndim))
        if t.ndim:
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        fh.write(t.astype("<f4", copy=False).tobytes())


def tensor_read(path) -> np.ndarray:
    """Deserialize a .tsr file written by :func:`tensor_write`.

    Raises:
        FormatError: bad magic, unsupported version or dtype, zero
            dimensions, or a payload whose size disagrees with the dims.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 4 + _HEADER.size:
        raise FormatError("truncated header")
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    version, dtype_code, ndim = _HEADER.unpack_from(blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype_code != _CODE_F32:
        raise FormatError(f"unsupported dtype code {dtype_code}")
    offset = 4 + _HEADER.size
    if len(blob) < offset + 4 * ndim:
        raise FormatError("truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
    if any(d == 0 for d in dims):
        raise FormatError("zero-sized dimension")
    offset += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = blob[offset:]
    if len(payload) != 4 * count:
        raise FormatError(f"payload is {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4", count=count).reshape(dims).astype(DTYPE)
