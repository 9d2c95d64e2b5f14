"""Binary checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
header, then the raw float64 little-endian payload. The header carries a
format version, the config snapshot, RNG/progress info and a manifest of
(name, shape, byte offset) entries in serialization order. Offsets are
contiguous and cover the payload exactly, and save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ContractViolation

MAGIC = b"PARACAP1"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors, config, extra=None):
    """Write named float64 arrays plus a config snapshot and extra metadata."""
    manifest = []
    offset = 0
    blobs = []
    for name in tensors:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float64))
        blob = arr.astype("<f8").tobytes()
        manifest.append([name, list(arr.shape), offset])
        offset += len(blob)
        blobs.append(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "extra": extra or {},
        "manifest": manifest,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read back (tensors, config, extra) from `save_checkpoint` output."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ContractViolation(f"{path}: not a checkpoint file")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ContractViolation(
                f"{path}: unsupported format version {header['format_version']}")
        payload = fh.read(header["payload_bytes"])
    tensors = {}
    expected = 0
    for name, shape, offset in header["manifest"]:
        if offset != expected:
            raise ContractViolation(f"{path}: manifest offsets not contiguous")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64)
        expected = offset + nbytes
    if expected != header["payload_bytes"]:
        raise ContractViolation(f"{path}: manifest does not cover payload")
    return tensors, header["config"], header["extra"]
