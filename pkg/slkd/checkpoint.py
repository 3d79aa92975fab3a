# -*- coding: utf-8 -*-
"""Versioned flat-binary persistence for models, optimizer state and
datasets.

File layout (all integers little-endian)::

    offset  size      field
    0       4         magic b"SLKD"
    4       2         format version, u16 (currently 1)
    6       1         role tag length R, u8
    7       R         role tag, UTF-8 ("teacher", "student", "snapshot", "dataset")
    .       4         spec descriptor length S, u32
    .       S         spec descriptor, canonical JSON (ModelSpec.to_dict())
    .       4         metadata length M, u32
    .       M         metadata, canonical JSON {"meta": ..., "optimizer": ...}
    .       4         tensor count T, u32
    T times:
    .       2         name length N, u16
    .       N         name, UTF-8 ("param/<p>", "opt/<slot>/<p>", "images", ...)
    .       1         rank D, u8
    .       4*D       extents, u32 each
    .       4*prod    float32 values, row-major
    end-4   4         CRC-32 (zlib) of every preceding byte, u32

Checks on load run in order: magic, version, structure (the declared
lengths and shapes must account for exactly the bytes present), CRC.
"""

import json
import logging
import struct
import zlib

import numpy as np

from slkd.data_readers import Dataset
from slkd.nn_core import ROLES, Model, ModelSpec, ShapeError
from slkd.training_functions import OptimizerState
from slkd.utils import atomic_write_bytes, canonical_json, sha256_hex

logger = logging.getLogger(__name__)

MAGIC = b"SLKD"
VERSION = 1
DATASET_ROLE = "dataset"


class CheckpointError(ValueError):
    """Base class for unreadable or unwritable checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class ShapeInconsistencyError(CheckpointError):
    pass


def _encode(role, descriptor, metadata, tensors):
    role_bytes = role.encode("utf-8")
    spec_bytes = canonical_json(descriptor).encode("utf-8")
    meta_bytes = canonical_json(metadata).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION),
             struct.pack("<B", len(role_bytes)), role_bytes,
             struct.pack("<I", len(spec_bytes)), spec_bytes,
             struct.pack("<I", len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name, array in tensors:
        array = np.ascontiguousarray(array, dtype="<f4")
        name_bytes = name.encode("utf-8")
        parts += [struct.pack("<H", len(name_bytes)), name_bytes,
                  struct.pack("<B", array.ndim),
                  struct.pack("<%dI" % array.ndim, *array.shape),
                  array.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Cursor(object):

    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ShapeInconsistencyError("%s: declared layout needs %d more bytes than present"
                                          % (self.path, self.pos + n - len(self.data)))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode(data, path):
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("%s: bad magic %r (expected %r)" % (path, bytes(data[:4]), MAGIC))
    if len(data) < 6:
        raise ShapeInconsistencyError("%s: truncated before the version field" % path)
    version, = struct.unpack("<H", data[4:6])
    if version != VERSION:
        raise UnsupportedVersionError("%s: unsupported format version %d (supported: %d)"
                                      % (path, version, VERSION))
    if len(data) < 10:
        raise ShapeInconsistencyError("%s: truncated file (%d bytes)" % (path, len(data)))
    body = data[:-4]
    cur = _Cursor(body, path)
    cur.take(6)
    role_len, = cur.unpack("<B")
    role_raw = cur.take(role_len)
    spec_len, = cur.unpack("<I")
    spec_raw = cur.take(spec_len)
    meta_len, = cur.unpack("<I")
    meta_raw = cur.take(meta_len)
    count, = cur.unpack("<I")
    raw_tensors = []
    for _ in range(count):
        name_len, = cur.unpack("<H")
        name_raw = cur.take(name_len)
        ndim, = cur.unpack("<B")
        shape = cur.unpack("<%dI" % ndim)
        raw_tensors.append((name_raw, shape, cur.take(4 * int(np.prod(shape)))))
    if cur.pos != len(body):
        raise ShapeInconsistencyError("%s: %d bytes not accounted for by the declared shapes"
                                      % (path, len(body) - cur.pos))
    stored, = struct.unpack("<I", data[-4:])
    if stored != zlib.crc32(body) & 0xFFFFFFFF:
        raise ChecksumError("%s: checksum mismatch" % path)
    tensors = {}
    for name_raw, shape, raw in raw_tensors:
        tensors[name_raw.decode("utf-8")] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    return (role_raw.decode("utf-8"), json.loads(spec_raw.decode("utf-8")),
            json.loads(meta_raw.decode("utf-8")), tensors)


def _read(path):
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise CheckpointError("cannot read checkpoint %s: %s" % (path, e))


def _write(path, data):
    try:
        atomic_write_bytes(path, data)
    except OSError as e:
        raise CheckpointError("cannot write checkpoint %s: %s" % (path, e))


def save(model, optimizer_state, meta, path):
    """Persist a model, its optimizer state and JSON-able metadata.

    Parameters
    ----------
    model : nn_core.Model
        Parameters must be finite.
    optimizer_state : training_functions.OptimizerState or None
    meta : dict
    path : str

    Returns
    -------
    str
        Checkpoint id: the first 16 hex digits of the file's SHA-256.
        Identical inputs give identical bytes and therefore the same id.
    """
    for name, p in model.params.items():
        if not np.all(np.isfinite(p)):
            raise ValueError("parameter %s is not finite; refusing to checkpoint" % name)
    tensors = [("param/" + name, p) for name, p in model.params.items()]
    optimizer = None
    if optimizer_state is not None:
        optimizer = {"kind": optimizer_state.kind, "step": optimizer_state.step,
                     "slots": sorted(optimizer_state.slots)}
        for slot in sorted(optimizer_state.slots):
            bank = optimizer_state.slots[slot]
            tensors += [("opt/%s/%s" % (slot, name), bank[name])
                        for name in model.params if name in bank]
    data = _encode(model.role, model.spec.to_dict(), {"meta": meta or {}, "optimizer": optimizer},
                   tensors)
    _write(path, data)
    ckpt_id = sha256_hex(data)[:16]
    logger.debug("Saved %s checkpoint %s to %s", model.role, ckpt_id, path)
    return ckpt_id


def load(path):
    """Inverse of ``save``.

    Returns
    -------
    (nn_core.Model, training_functions.OptimizerState or None, dict)

    Raises
    ------
    BadMagicError, UnsupportedVersionError, ShapeInconsistencyError, ChecksumError
    """
    role, descriptor, metadata, tensors = _decode(_read(path), path)
    if role not in ROLES:
        raise CheckpointError("%s holds a %r record, not a model" % (path, role))
    try:
        spec = ModelSpec.from_dict(descriptor)
        params = {name[len("param/"):]: t for name, t in tensors.items() if name.startswith("param/")}
        model = Model(spec, params, role)
    except (ShapeError, KeyError, TypeError) as e:
        raise ShapeInconsistencyError("%s: tensors do not match the stored spec: %s" % (path, e))
    state = None
    optimizer = metadata.get("optimizer")
    if optimizer:
        state = OptimizerState(optimizer["kind"], int(optimizer["step"]))
        for slot in optimizer["slots"]:
            prefix = "opt/%s/" % slot
            state.slots[slot] = {name[len(prefix):]: t.copy() for name, t in tensors.items()
                                 if name.startswith(prefix)}
    return model, state, metadata.get("meta", {})


def checkpoint_id(path):
    return sha256_hex(_read(path))[:16]


def save_dataset(dataset, path, meta=None):
    """Store a dataset in the checkpoint container (role "dataset") so a
    synthetic corpus can be replayed exactly."""
    descriptor = {"class_count": dataset.class_count, "split": dataset.split}
    data = _encode(DATASET_ROLE, descriptor, {"meta": meta or {}, "optimizer": None},
                   [("images", dataset.images), ("labels", dataset.labels.astype(np.float32))])
    _write(path, data)
    return sha256_hex(data)[:16]


def load_dataset(path):
    role, descriptor, _, tensors = _decode(_read(path), path)
    if role != DATASET_ROLE:
        raise CheckpointError("%s holds a %r record, not a dataset" % (path, role))
    try:
        return Dataset(tensors["images"], tensors["labels"].astype(np.int64),
                       descriptor["class_count"], descriptor["split"])
    except (KeyError, ValueError) as e:
        raise ShapeInconsistencyError("%s: dataset record is inconsistent: %s" % (path, e))
