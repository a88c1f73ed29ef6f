"""Tests for the binary model checkpoint format."""

import struct

import numpy as np
import pytest

from app.models.schemas import EpochRecord, TrainingHistory
from app.services.classifier import build_model, predict_proba
from app.storage.checkpoint_store import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointStore,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
)
from app.utils.error_handler import ChecksumError, CheckpointError, ConfigMismatchError, VersionMismatchError


@pytest.fixture
def model(tiny_config):
    """Tiny model with perturbed batch-norm statistics and a short history."""
    trained = build_model(tiny_config, seed=11)
    for name, buffer in trained.network.buffers().items():
        buffer[...] = np.random.default_rng(len(name)).uniform(0.5, 1.5, buffer.shape)
    trained.history = TrainingHistory(
        epochs=[
            EpochRecord(epoch=1, train_loss=1.6, train_acc=0.2, test_loss=1.7, test_acc=0.2),
            EpochRecord(epoch=2, train_loss=1.1, train_acc=0.6),
        ]
    )
    trained.split_seed = 13
    trained.test_fraction = 0.3
    return trained


def test_round_trip_restores_everything(model, separable_graphs):
    """Test that weights, buffers, labels, history and split provenance survive bit-exactly."""
    restored = checkpoint_from_bytes(checkpoint_to_bytes(model))

    assert restored.config == model.config
    assert restored.labels == model.labels
    assert restored.history == model.history
    assert restored.split_seed == 13
    assert restored.test_fraction == 0.3
    original = model.network.state_dict()
    for name, value in restored.network.state_dict().items():
        np.testing.assert_array_equal(value, original[name])

    graphs = separable_graphs()
    np.testing.assert_array_equal(predict_proba(restored, graphs), predict_proba(model, graphs))


def test_blob_starts_with_magic_and_version(model):
    """Test the fixed prefix of the file layout."""
    blob = checkpoint_to_bytes(model)

    assert blob[:8] == MAGIC
    assert struct.unpack_from("<I", blob, 8)[0] == FORMAT_VERSION


def test_bad_magic(model):
    """Test that a foreign file is rejected as not a checkpoint."""
    with pytest.raises(CheckpointError) as excinfo:
        checkpoint_from_bytes(b"NOTACKPT" + checkpoint_to_bytes(model)[8:])
    assert excinfo.type is CheckpointError


@pytest.mark.parametrize("cut", [10, 1000])
def test_truncated_checkpoint(model, cut):
    """Test that truncation is detected by the checksum."""
    blob = checkpoint_to_bytes(model)

    with pytest.raises(ChecksumError):
        checkpoint_from_bytes(blob[: len(blob) - cut])


def test_truncated_to_prefix(model):
    """Test that a file cut inside its fixed prefix is detected."""
    with pytest.raises(ChecksumError):
        checkpoint_from_bytes(checkpoint_to_bytes(model)[:14])


def test_corrupted_byte(model):
    """Test that a single flipped tensor byte fails the checksum."""
    blob = bytearray(checkpoint_to_bytes(model))
    blob[len(blob) // 2] ^= 0xFF

    with pytest.raises(ChecksumError):
        checkpoint_from_bytes(bytes(blob))


def test_version_mismatch(model):
    """Test that another format version is refused before the checksum is checked."""
    blob = bytearray(checkpoint_to_bytes(model))
    blob[8:12] = struct.pack("<I", FORMAT_VERSION + 1)

    with pytest.raises(VersionMismatchError):
        checkpoint_from_bytes(bytes(blob))


def test_expected_config_mismatch(model, tiny_config):
    """Test that a checkpoint for another layout is refused when a config is expected."""
    blob = checkpoint_to_bytes(model)

    assert checkpoint_from_bytes(blob, expected_config=tiny_config).config == tiny_config
    with pytest.raises(ConfigMismatchError):
        checkpoint_from_bytes(blob, expected_config=tiny_config.model_copy(update={"spp_levels": (1, 2, 4)}))


def test_store_save_and_load(settings, logger, model, tmp_path):
    """Test that the store writes to nested paths and loads the same model back."""
    store = CheckpointStore(settings, logger)

    path = store.save(model, tmp_path / "models" / "model.ckpt")
    restored = store.load(path)

    assert path.exists()
    assert restored.history == model.history


def test_store_missing_file(settings, logger, tmp_path):
    """Test that loading a missing checkpoint is a checkpoint error."""
    with pytest.raises(CheckpointError):
        CheckpointStore(settings, logger).load(tmp_path / "absent.ckpt")
