"""Dense float tensors, deterministic random streams and the LTT1 file format.

A Tensor is a C-contiguous numpy array. Parameters and activations are stored
as float32; gradient checks run the same code on float64 copies. Operations
never mutate their inputs.
"""
import struct
import zlib
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import numpy.typing as npt

from ltcnn.errors import ShapeError

Tensor = npt.NDArray[np.floating]
Rng = np.random.Generator

DTYPE = np.float32
LTT_MAGIC = b"LTT1"

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def tensor(values, dtype=DTYPE) -> Tensor:
    """Build a contiguous tensor from nested sequences or an array."""
    out = np.ascontiguousarray(np.asarray(values, dtype=dtype))
    if out.ndim and 0 in out.shape:
        raise ShapeError(f"tensor dimensions must be positive, got {out.shape}")
    return out


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major flat position of `index` within `shape` (last dimension fastest)."""
    if len(shape) != len(index):
        raise ShapeError(f"index rank {len(index)} does not match shape {tuple(shape)}")
    flat = 0
    for dim, i in zip(shape, index):
        if not 0 <= i < dim:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        flat = flat * dim + i
    return flat


def elementwise(op: str, a: Tensor, b: Union[Tensor, float]) -> Tensor:
    """Apply `add`, `sub`, `mul` or `max` (scalar only) element by element."""
    if op == "max":
        if not np.isscalar(b):
            raise ValueError("max is only defined against a scalar")
        return np.maximum(a, np.asarray(b, dtype=a.dtype))
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op '{op}'")
    if np.isscalar(b):
        return _ELEMENTWISE[op](a, np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return _ELEMENTWISE[op](a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with a thread-independent accumulation order.

    einsum without path optimization runs numpy's own C loop instead of
    dispatching to BLAS, so the result does not depend on the thread count.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.einsum("mk,kn->mn", a, b, optimize=False)


def make_rng(seed: int, stream: str = "root") -> Rng:
    """PCG64 generator for a named stream derived from the root seed.

    Streams are separated with SeedSequence spawn keys, so the same
    (seed, stream) pair yields the same sequence on every platform.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def sample_normal(rng: Rng, shape: Sequence[int], mean: float = 0.0, stddev: float = 1.0) -> Tensor:
    if stddev < 0:
        raise ValueError(f"stddev must be >= 0, got {stddev}")
    draws = rng.standard_normal(size=tuple(shape))
    return np.ascontiguousarray((draws * stddev + mean).astype(DTYPE))


def check_finite(x: Tensor, what: str) -> Tensor:
    """Return `x` unchanged; FloatingPointError if any element is NaN or infinite."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains non-finite values")
    return x


def encode_tensor(x: Tensor) -> bytes:
    """Serialize to LTT1: magic, u8 rank, rank LE u32 dims, LE f32 payload."""
    arr = np.ascontiguousarray(x, dtype="<f4")
    if arr.ndim > 255:
        raise ShapeError(f"rank {arr.ndim} does not fit LTT1")
    header = LTT_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def decode_tensor(raw: bytes, source: str = "<bytes>") -> Tensor:
    if raw[:4] != LTT_MAGIC:
        raise ValueError(f"cannot decode '{source}': bad LTT1 magic")
    if len(raw) < 5:
        raise ValueError(f"cannot decode '{source}': missing rank")
    rank = raw[4]
    dims_end = 5 + 4 * rank
    if len(raw) < dims_end:
        raise ValueError(f"cannot decode '{source}': truncated dimensions")
    shape = struct.unpack(f"<{rank}I", raw[5:dims_end])
    count = int(np.prod(shape)) if rank else 1
    if len(raw) != dims_end + 4 * count:
        raise ValueError(f"cannot decode '{source}': truncated payload")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=dims_end)
    return data.reshape(shape).astype(DTYPE)


def save_tensor(x: Tensor, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_tensor(x))


def load_tensor(path: Union[str, Path]) -> Tensor:
    return decode_tensor(Path(path).read_bytes(), source=str(path))
