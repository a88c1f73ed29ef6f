"""Checkpoint Store - binary save/restore of trained models.

Layout (all integers little-endian u32):

    magic  b"PMUCKPT1"
    version
    header length, header (UTF-8 JSON: model config, labels, history,
        split seed, test fraction, tensor names and shapes)
    tensor data, float32 little-endian, in header order
    CRC32 of everything above
"""

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from app.core.config import Settings
from app.models.schemas import ModelConfig, TrainingHistory
from app.services.classifier import SppCnn, TrainedModel
from app.utils.error_handler import (
    ChecksumError,
    CheckpointError,
    ConfigMismatchError,
    VersionMismatchError,
)

MAGIC = b"PMUCKPT1"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_TENSOR_DTYPE = np.dtype("<f4")


def checkpoint_to_bytes(model: TrainedModel) -> bytes:
    """Serialize a model; float32 networks round-trip bit-exactly."""
    state = model.network.state_dict()
    header = {
        "model_config": model.config.model_dump(mode="json"),
        "labels": [label.value for label in model.labels],
        "history": model.history.model_dump(mode="json"),
        "split_seed": model.split_seed,
        "test_fraction": model.test_fraction,
        "tensors": [{"name": name, "shape": list(array.shape)} for name, array in state.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    body = bytearray(MAGIC)
    body += _U32.pack(FORMAT_VERSION)
    body += _U32.pack(len(header_bytes))
    body += header_bytes
    for array in state.values():
        body += np.ascontiguousarray(array, dtype=_TENSOR_DTYPE).tobytes()
    body += _U32.pack(zlib.crc32(body))
    return bytes(body)


def checkpoint_from_bytes(blob: bytes, expected_config: Optional[ModelConfig] = None) -> TrainedModel:
    """
    Rebuild a model from checkpoint bytes.

    Raises:
        CheckpointError: Not a checkpoint
        VersionMismatchError: Written by another format version
        ChecksumError: Truncated or corrupted
        ConfigMismatchError: Config differs from `expected_config`, or tensors
            do not fit the stored config
    """
    prefix = len(MAGIC) + 2 * _U32.size
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    if len(blob) < prefix + _U32.size:
        raise ChecksumError("checkpoint is truncated")
    (version,) = _U32.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    (stored_crc,) = _U32.unpack_from(blob, len(blob) - _U32.size)
    if zlib.crc32(blob[: -_U32.size]) != stored_crc:
        raise ChecksumError("checkpoint checksum mismatch (truncated or corrupted file)")

    (header_length,) = _U32.unpack_from(blob, len(MAGIC) + _U32.size)
    header = json.loads(blob[prefix : prefix + header_length].decode("utf-8"))
    config = ModelConfig(**header["model_config"])
    if expected_config is not None and expected_config != config:
        raise ConfigMismatchError("checkpoint was written for a different model config")

    offset = prefix + header_length
    state: dict[str, np.ndarray] = {}
    for tensor in header["tensors"]:
        shape = tuple(tensor["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        state[tensor["name"]] = np.frombuffer(blob, dtype=_TENSOR_DTYPE, count=count, offset=offset).reshape(shape)
        offset += count * _TENSOR_DTYPE.itemsize
    if offset != len(blob) - _U32.size:
        raise ConfigMismatchError("tensor block length does not match the header")

    network = SppCnn(config)
    try:
        network.load_state_dict(state)
    except ValueError as e:
        raise ConfigMismatchError(f"checkpoint tensors do not fit its config: {e}") from e

    return TrainedModel(
        network=network,
        labels=header["labels"],
        history=TrainingHistory(**header["history"]),
        split_seed=header["split_seed"],
        test_fraction=header["test_fraction"],
    )


class CheckpointStore:
    """Saves and loads model checkpoints on disk."""

    def __init__(self, settings: Settings, logger: Any):
        """
        Initialize checkpoint store.

        Args:
            settings: Application settings
            logger: Logger instance
        """
        self.settings = settings
        self.logger = logger

    def save(self, model: TrainedModel, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = checkpoint_to_bytes(model)
        path.write_bytes(blob)
        self.logger.info(f"Saved checkpoint: {path} ({len(blob)} bytes, {model.network.trainable_count()} trainable parameters)")
        return path

    def load(self, path: Union[str, Path], expected_config: Optional[ModelConfig] = None) -> TrainedModel:
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        model = checkpoint_from_bytes(path.read_bytes(), expected_config)
        self.logger.info(f"Loaded checkpoint: {path} ({len(model.history)} epochs of history)")
        return model
