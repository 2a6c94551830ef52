"""Checkpoint serialization round trips and corruption handling."""

import numpy as np
import pytest

from fashionseg import checkpoint, nn
from fashionseg.errors import (CheckpointMagicError, CheckpointShapeError,
                               CheckpointTruncatedError)
from fashionseg.tensor import Tensor


def _random_registry(seed, n_params=6):
    rng = np.random.default_rng(seed)
    reg = nn.ParamRegistry()
    for i in range(n_params):
        ndim = int(rng.integers(1, 5))
        shape = tuple(int(s) for s in rng.integers(1, 6, ndim))
        data = rng.standard_normal(shape).astype(np.float32)
        reg.add("layer%d/weight" % i, Tensor(data), nn.WEIGHT)
    return reg


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_bitwise(tmp_path, seed):
    reg = _random_registry(seed)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 1234, path)

    entries, iteration = checkpoint.load_checkpoint(path, expected_registry=reg)
    assert iteration == 1234
    assert [n for n, _ in entries] == reg.names()
    for name, values in entries:
        np.testing.assert_array_equal(values, reg.get(name).data)

    # saving the loaded values again must reproduce the file byte for byte
    reg2 = _random_registry(seed)
    checkpoint.restore_into(reg2, path)
    path2 = tmp_path / "ck2.fseg"
    checkpoint.save_checkpoint(reg2, 1234, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_header_layout(tmp_path):
    reg = nn.ParamRegistry()
    reg.add("w", Tensor(np.zeros(2, dtype=np.float32)), nn.WEIGHT)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 7, path)
    blob = path.read_bytes()
    assert blob[:4] == b"FSEG"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:16], "little") == 7
    assert int.from_bytes(blob[16:20], "little") == 1


def test_bad_magic(tmp_path):
    path = tmp_path / "ck.fseg"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointMagicError):
        checkpoint.load_checkpoint(path)


def test_bad_version(tmp_path):
    reg = _random_registry(0)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 0, path)
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointMagicError):
        checkpoint.load_checkpoint(path)


@pytest.mark.parametrize("cut", [2, 10, 21, -3, -1])
def test_truncation(tmp_path, cut):
    reg = _random_registry(1)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 0, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:cut] if cut > 0 else blob[:len(blob) + cut])
    with pytest.raises(CheckpointTruncatedError):
        checkpoint.load_checkpoint(path)


def test_shape_mismatch(tmp_path):
    reg = _random_registry(2)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 0, path)
    other = nn.ParamRegistry()
    for name in reg.names():
        other.add(name, Tensor(np.zeros((2, 7), dtype=np.float32)), nn.WEIGHT)
    with pytest.raises(CheckpointShapeError):
        checkpoint.load_checkpoint(path, expected_registry=other)


def test_unknown_entry(tmp_path):
    reg = _random_registry(3)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 0, path)
    with pytest.raises(CheckpointShapeError):
        checkpoint.load_checkpoint(path, expected_registry=nn.ParamRegistry())


def test_restore_entry_count_mismatch(tmp_path):
    reg = _random_registry(4, n_params=3)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 0, path)
    bigger = _random_registry(4, n_params=3)
    bigger.add("extra", Tensor(np.zeros(1, dtype=np.float32)), nn.WEIGHT)
    with pytest.raises(CheckpointShapeError):
        checkpoint.restore_into(bigger, path)


def test_restore_into_copies_values(tmp_path):
    reg = _random_registry(5)
    path = tmp_path / "ck.fseg"
    checkpoint.save_checkpoint(reg, 42, path)
    fresh = _random_registry(5)
    for t in fresh.trainable().values():
        t.data[...] = 0.0
    assert checkpoint.restore_into(fresh, path) == 42
    for name in reg.names():
        np.testing.assert_array_equal(fresh.get(name).data, reg.get(name).data)
