"""LTCNNCP1 checkpoint files.

Layout: 8-byte magic `LTCNNCP1`, little-endian u32 header length, UTF-8 JSON
header, then the contiguous little-endian float32 payload. Tensor offsets in
the header are payload-relative, so loading follows the offset table rather
than the order of its entries.
"""
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeInt, TypeAdapter, ValidationError

from ltcnn.errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
)
from ltcnn.logs import get_logger
from ltcnn.network import Network, NetworkSpec, build_network, count_parameters, expected_tensor_shapes
from ltcnn.tensor import DTYPE, Tensor, make_rng

MAGIC = b"LTCNNCP1"
FORMAT_VERSION = 1

log = get_logger(__name__)


class CheckpointMetadata(BaseModel):
    seed: int = 0
    epochs_trained: int = 0
    format_version: int = FORMAT_VERSION
    best_epoch: Optional[int] = None
    best_val_accuracy: Optional[float] = None


@dataclass
class Checkpoint:
    spec: NetworkSpec
    tensors: "OrderedDict[str, Tensor]"
    metadata: CheckpointMetadata


class TensorIndexEntry(BaseModel):
    """One stored tensor: name, shape and its byte range within the payload."""

    model_config = ConfigDict(extra="forbid")

    name: str
    shape: List[NonNegativeInt]
    byte_offset: NonNegativeInt
    byte_len: NonNegativeInt


_TENSOR_INDEX = TypeAdapter(List[TensorIndexEntry])


def to_checkpoint(net: Network, metadata: Optional[CheckpointMetadata] = None) -> Checkpoint:
    """Snapshot (copy) every parameter and buffer of `net`."""
    tensors = OrderedDict((name, value.copy()) for name, value in net.state_tensors().items())
    return Checkpoint(spec=net.spec, tensors=tensors, metadata=metadata or CheckpointMetadata())


def from_checkpoint(ckpt: Checkpoint) -> Network:
    net = build_network(ckpt.spec, make_rng(ckpt.metadata.seed, "init"))
    net.load_tensors(ckpt.tensors)
    return net


def _header_bytes(spec: NetworkSpec, metadata: CheckpointMetadata, index) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "spec": spec.model_dump(mode="json"),
        "class_names": list(spec.class_names),
        "metadata": metadata.model_dump(mode="json"),
        "tensor_index": index,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _tensor_index(shapes: Dict[str, tuple]):
    index = []
    offset = 0
    for name, shape in shapes.items():
        byte_len = 4 * int(np.prod(shape))
        index.append({"name": name, "shape": list(shape), "byte_offset": offset, "byte_len": byte_len})
        offset += byte_len
    return index


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    shapes = OrderedDict((name, tuple(value.shape)) for name, value in ckpt.tensors.items())
    header = _header_bytes(ckpt.spec, ckpt.metadata, _tensor_index(shapes))
    payload = b"".join(np.ascontiguousarray(value, dtype="<f4").tobytes() for value in ckpt.tensors.values())
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if raw[:8] != MAGIC:
        raise CheckpointFormatError(f"bad magic in '{source}'")
    if len(raw) < 12:
        raise CheckpointTruncatedError(f"truncated payload in '{source}': missing header length")
    (header_len,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + header_len:
        raise CheckpointTruncatedError(f"truncated payload in '{source}': header cut short")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"unreadable header in '{source}': {e}") from e

    if not isinstance(header, dict):
        raise CheckpointFormatError(f"invalid header in '{source}': expected a JSON object, got {type(header).__name__}")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version} in '{source}'")
    try:
        spec = NetworkSpec.model_validate(header["spec"])
        metadata = CheckpointMetadata.model_validate(header.get("metadata", {}))
        index = _TENSOR_INDEX.validate_python(header["tensor_index"])
    except KeyError as e:
        raise CheckpointFormatError(f"invalid header in '{source}': missing key {e}") from e
    except ValidationError as e:
        raise CheckpointFormatError(f"invalid header in '{source}': {e}") from e

    payload = memoryview(raw)[12 + header_len:]
    entries = {entry.name: entry for entry in index}
    tensors = OrderedDict()
    for name, shape in expected_tensor_shapes(spec).items():
        entry = entries.get(name)
        if entry is None:
            raise CheckpointFormatError(f"tensor '{name}' missing from '{source}'")
        if tuple(entry.shape) != shape or entry.byte_len != 4 * int(np.prod(shape)):
            raise CheckpointShapeError(f"tensor '{name}' in '{source}' has shape {entry.shape}, spec implies {list(shape)}")
        start, end = entry.byte_offset, entry.byte_offset + entry.byte_len
        if end > len(payload):
            raise CheckpointTruncatedError(f"truncated payload in '{source}': tensor '{name}' ends past the file")
        tensors[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).astype(DTYPE)
    return Checkpoint(spec=spec, tensors=tensors, metadata=metadata)


def write_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))
    log.info("checkpoint_written", path=str(path), tensors=len(ckpt.tensors))


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), source=str(path))


def save_checkpoint(net: Network, path: Union[str, Path], metadata: Optional[CheckpointMetadata] = None) -> None:
    write_checkpoint(to_checkpoint(net, metadata), path)


def load_checkpoint(path: Union[str, Path]) -> Network:
    return from_checkpoint(read_checkpoint(path))


def model_size_bytes(spec: NetworkSpec, metadata: Optional[CheckpointMetadata] = None) -> int:
    """Size of the checkpoint file for `spec`: framing, JSON header and float32 payload
    (parameters plus batch-norm running statistics)."""
    table = count_parameters(spec)
    shapes = expected_tensor_shapes(spec)
    header = _header_bytes(spec, metadata or CheckpointMetadata(), _tensor_index(shapes))
    return len(MAGIC) + 4 + len(header) + 4 * (table.total + table.total_buffers)
