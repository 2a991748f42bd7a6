"""
Checkpoint container.

Layout (all integers little-endian):
- magic b"CFDR"
- uint32 format version
- one UTF-8 JSON header line (sorted keys, terminated by b"\\n") describing
  each record (name, shape, dtype, offset, nbytes), the metadata, quantized
  view scales and an optional reference profile
- the payload: raw record bytes in header order ('<f4' parameters, then
  'i1' quantized codes)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Any

import numpy as np
from pydantic import BaseModel, ValidationError

from src.config import config_hash
from src.core.errors import CheckpointError
from src.models.network import Model, ModelConfig, build_model
from src.models.quantization import QuantizedLayerView
from src.observability.logger import get_logger

logger = get_logger(__name__, component="checkpoint")

MAGIC = b"CFDR"
VERSION = 1
_PREFIX = struct.Struct("<4sI")


class CheckpointMetadata(BaseModel):
    """What the weights are: the last completed phase, seed and config hash."""

    phase: str = "init"
    seed: int = 0
    config_hash: str = ""


@dataclass
class CheckpointContents:
    model: Model
    metadata: CheckpointMetadata
    profile: dict[str, Any] | None


def _record(name: str, array: np.ndarray, dtype: str, offset: int) -> tuple[dict[str, Any], bytes]:
    raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
    header = {
        "name": name,
        "shape": list(array.shape),
        "dtype": dtype,
        "offset": offset,
        "nbytes": len(raw),
    }
    return header, raw


def save_checkpoint(
    model: Model,
    metadata: CheckpointMetadata | None = None,
    profile: dict[str, Any] | None = None,
) -> bytes:
    """
    Serialize parameters, quantized views and metadata.

    Args:
        model: Model to serialize
        metadata: Defaults to the model's phase, seed and config hash
        profile: Optional reference profile stored as a separate header record
    """
    if metadata is None:
        metadata = CheckpointMetadata(
            phase=model.phase, seed=model.config.seed, config_hash=config_hash(model.config)
        )

    records: list[dict[str, Any]] = []
    chunks: list[bytes] = []
    offset = 0
    for param in model.parameters():
        header, raw = _record(param.name, param.data, "<f4", offset)
        records.append(header)
        chunks.append(raw)
        offset += len(raw)
    for name in sorted(model.quantized):
        view = model.quantized[name]
        header, raw = _record(f"{name}.qweights", view.qweights, "i1", offset)
        records.append(header)
        chunks.append(raw)
        offset += len(raw)

    document = {
        "model_config": model.config.model_dump(mode="json"),
        "metadata": metadata.model_dump(mode="json"),
        "quantized": {name: {"scale": view.scale} for name, view in model.quantized.items()},
        "records": records,
        "profile": profile,
    }
    header_line = json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION) + header_line + b"\n" + b"".join(chunks)


def read_checkpoint(data: bytes) -> CheckpointContents:
    """
    Parse a checkpoint into a model, its metadata and the optional profile.

    Raises:
        CheckpointError: bad magic, version mismatch, malformed header or
            truncated payload (the message names the byte offset)
    """
    if len(data) < _PREFIX.size:
        raise CheckpointError(
            f"truncated checkpoint: prefix needs {_PREFIX.size} bytes, file ends at byte offset {len(data)}"
        )
    magic, version = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")

    newline = data.find(b"\n", _PREFIX.size)
    if newline < 0:
        raise CheckpointError(
            f"truncated header: no line terminator after byte offset {_PREFIX.size}"
        )
    try:
        document = json.loads(data[_PREFIX.size : newline].decode("utf-8"))
        config = ModelConfig.model_validate(document["model_config"])
        metadata = CheckpointMetadata.model_validate(document["metadata"])
        records = document["records"]
        quantized = document["quantized"]
    except (ValueError, KeyError, ValidationError) as e:
        raise CheckpointError(f"malformed header at byte offset {_PREFIX.size}: {e}") from e

    payload_start = newline + 1
    arrays: dict[str, np.ndarray] = {}
    end = payload_start
    for rec in records:
        start = payload_start + int(rec["offset"])
        end = start + int(rec["nbytes"])
        if end > len(data):
            raise CheckpointError(
                f"truncated payload: record {rec['name']} needs bytes {start}..{end}, "
                f"file ends at byte offset {len(data)}"
            )
        arrays[rec["name"]] = np.frombuffer(data[start:end], dtype=rec["dtype"]).reshape(
            rec["shape"]
        )
    if end != len(data):
        raise CheckpointError(f"{len(data) - end} trailing bytes after byte offset {end}")

    model = build_model(config)
    state = {name: arr.astype(np.float32) for name, arr in arrays.items() if not name.endswith(".qweights")}
    model.load_state_dict(state)
    model.phase = metadata.phase

    for layer_name, entry in sorted(quantized.items()):
        key = f"{layer_name}.qweights"
        if key not in arrays:
            raise CheckpointError(f"quantized layer {layer_name} has no {key} record")
        qweights = arrays[key].astype(np.int8).reshape(-1).copy()
        scale = float(entry["scale"])
        weight = model.layer(layer_name).weight
        model.quantized[layer_name] = QuantizedLayerView(
            layer_name,
            scale,
            qweights,
            weight.data.reshape(-1).copy(),
            weight,
        )

    logger.debug("Checkpoint read", records=len(records), phase=metadata.phase)
    return CheckpointContents(model, metadata, document.get("profile"))


def load_checkpoint(data: bytes) -> Model:
    """Parse a checkpoint and return only the model."""
    return read_checkpoint(data).model
