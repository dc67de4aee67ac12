"""Binary checkpoint: magic, version, JSON manifest, little-endian float32 blob.

Layout::

    b"RAMITCKP" | uint32 BE version | uint64 BE manifest length | manifest (UTF-8 JSON) | blob
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .model import ModelConfig, build_model
from .tensor import ShapeMismatch

MAGIC = b"RAMITCKP"
VERSION = 1
_HEADER = struct.Struct(">8sIQ")


class CheckpointIoError(IOError):
    pass


class UnknownParameter(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown parameter"


class CheckpointShapeMismatch(ShapeMismatch):
    def __init__(self, names: list[str], detail: str):
        super().__init__(detail)
        self.names = names


def atomic_write(path: str, payload: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(model, meta: dict | None = None) -> bytes:
    records, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        records.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": VERSION,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "params": records,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(mbytes)) + mbytes + b"".join(chunks)


def save_checkpoint(model, path: str, meta: dict | None = None):
    atomic_write(path, encode_checkpoint(model, meta))


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(manifest, arrays)`` without building a model."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise CheckpointIoError(f"cannot read checkpoint {path}: {e}") from e
    if len(buf) < _HEADER.size:
        raise CheckpointIoError("checkpoint header truncated")
    magic, version, mlen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointIoError("not a RAMiT checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointIoError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    if len(buf) < start + mlen:
        raise CheckpointIoError("checkpoint manifest truncated")
    try:
        manifest = json.loads(buf[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIoError(f"corrupt manifest: {e}") from e
    blob = memoryview(buf)[start + mlen:]
    arrays = {}
    expected = 0
    for rec in manifest["params"]:
        n = int(np.prod(rec["shape"], dtype=np.int64)) * 4
        off = rec["offset"]
        if off != expected:
            raise CheckpointIoError(f"record {rec['name']!r} offset {off} is not contiguous (expected {expected})")
        if off + n > len(blob):
            raise CheckpointIoError(
                f"blob truncated: record {rec['name']!r} needs bytes {off}..{off + n}, blob has {len(blob)}")
        arrays[rec["name"]] = np.frombuffer(blob[off:off + n], dtype="<f4").reshape(rec["shape"]).astype(np.float32)
        expected = off + n
    return manifest, arrays


def load_checkpoint(path: str, config: ModelConfig | None = None):
    """Load a model; with ``config`` given, the checkpoint must match it exactly.

    Returns ``(model, meta)``.
    """
    manifest, arrays = read_checkpoint(path)
    cfg = config or ModelConfig.from_dict(manifest["config"])
    model = build_model(cfg, seed=None)
    own = dict(model.named_parameters())
    unknown = [n for n in arrays if n not in own]
    missing = [n for n in own if n not in arrays]
    bad = [n for n in own if n in arrays and arrays[n].shape != own[n].shape]
    if bad or missing:
        names = bad + missing
        lines = [f"{n}: checkpoint {arrays[n].shape} vs model {own[n].shape}" for n in bad]
        lines += [f"{n}: missing from checkpoint" for n in missing]
        raise CheckpointShapeMismatch(names, "checkpoint does not match config:\n  " + "\n  ".join(lines))
    if unknown:
        raise UnknownParameter(f"checkpoint has parameters the model lacks: {unknown}")
    model.load_arrays(arrays)
    return model, manifest.get("meta", {})
