"""Bit-exact binary checkpoint format for named parameter collections.

Layout (little-endian, no padding):
  magic "FSEG" | u32 version=1 | u64 iteration | u32 entry count
  per entry: u16 name length | UTF-8 name | u8 ndim | ndim x u32 extents
             | prod(extents) x f32 values
"""

import struct

import numpy as np

from .errors import (CheckpointMagicError, CheckpointShapeError,
                     CheckpointTruncatedError)

MAGIC = b"FSEG"
VERSION = 1


def save_checkpoint(registry, iteration, path):
    """Write all registry entries (including BN running buffers) in order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", int(iteration)))
        items = registry.items()
        fh.write(struct.pack("<I", len(items)))
        for name, (tensor, _role) in items:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            shape = tensor.shape
            fh.write(struct.pack("<B", len(shape)))
            for ext in shape:
                fh.write(struct.pack("<I", ext))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(
                "checkpoint truncated at byte %d (need %d more)" % (self.pos, n))
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))[0]


def load_checkpoint(path, expected_registry=None):
    """Read (entries, iteration); entries is an ordered list of (name, f32 array).

    When `expected_registry` is given, every entry's shape is validated
    against the registered tensor of the same name.
    """
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != MAGIC:
        raise CheckpointMagicError("bad checkpoint magic (expected FSEG)")
    version = rd.u("<I")
    if version != VERSION:
        raise CheckpointMagicError("unsupported checkpoint version %d" % version)
    iteration = rd.u("<Q")
    count = rd.u("<I")
    entries = []
    for _ in range(count):
        name_len = rd.u("<H")
        name = rd.take(name_len).decode("utf-8")
        ndim = rd.u("<B")
        shape = tuple(rd.u("<I") for _ in range(ndim))
        size = 1
        for ext in shape:
            size *= ext
        values = np.frombuffer(rd.take(4 * size), dtype="<f4").reshape(shape).copy()
        if expected_registry is not None:
            if name not in expected_registry:
                raise CheckpointShapeError("checkpoint entry %r not in registry" % name)
            want = expected_registry.get(name).shape
            if tuple(want) != shape:
                raise CheckpointShapeError(
                    "checkpoint entry %r has shape %s, registry expects %s"
                    % (name, shape, tuple(want)))
        entries.append((name, values))
    return entries, iteration


def restore_into(registry, path):
    """Load a checkpoint and copy its values into a matching registry."""
    entries, iteration = load_checkpoint(path, expected_registry=registry)
    if len(entries) != len(registry):
        raise CheckpointShapeError(
            "checkpoint has %d entries, registry expects %d"
            % (len(entries), len(registry)))
    for name, values in entries:
        t = registry.get(name)
        t.data[...] = values.astype(t.dtype, copy=False)
    return iteration
