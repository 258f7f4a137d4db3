"""Binary checkpoint format: named parameters plus the spec that produced them.

Layout (all integers little-endian):

    magic "UERF" | u32 format version | u32 blob_len | UTF-8 JSON blob
    then repeated records:
    u32 name_len | name UTF-8 | u8 dtype tag (0 = float64) | u32 rank
    | u64 extents[rank] | raw little-endian float64 payload

The JSON blob holds the ModelSpec, step counter, vocabulary hash, and an
optional free-form `extra` section (used for fine-tuning task metadata).
Optimizer state rides along as records under the reserved "optimizer."
prefix. Writes are atomic (temp file + rename); loads verify sizes and fail
cleanly on truncation.
"""

import json
import os
import struct
import sys
import tempfile

import numpy as np

from .errors import CheckpointError
from .specs import ModelSpec

MAGIC = b"UERF"
VERSION = 1
DTYPE_F64 = 0


def _write_record(fh, name, array):
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(array, dtype="<f8")
    fh.write(struct.pack("<I", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", DTYPE_F64))
    fh.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<Q", extent))
    fh.write(arr.tobytes())


def save_checkpoint(model, path, step=0, vocab_hash="", optimizer=None,
                    extra=None):
    """Serialize a model (and optionally its optimizer state) atomically."""
    blob = {
        "spec": model.spec.to_dict(),
        "step": int(step),
        "vocab_hash": vocab_hash,
        "optimizer_t": optimizer.t if optimizer is not None else None,
        "extra": extra or {},
    }
    blob_b = json.dumps(blob).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<I", len(blob_b)))
            fh.write(blob_b)
            for name, p in model.named_parameters():
                _write_record(fh, name, p.data)
            if optimizer is not None:
                for name, arr in optimizer.state_arrays().items():
                    _write_record(fh, f"optimizer.{name}", arr)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class CheckpointFile:
    def __init__(self, spec, step, vocab_hash, params, optim, optim_t, extra):
        self.spec = spec
        self.step = step
        self.vocab_hash = vocab_hash
        self.params = params
        self.optim = optim
        self.optim_t = optim_t
        self.extra = extra


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(
            f"truncated checkpoint: wanted {n} bytes for {what}, got {len(data)}"
        )
    return data


def load_checkpoint(path):
    """Parse a checkpoint file into spec + named arrays; never a partial model."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(
                f"{path} is not a checkpoint: expected magic {MAGIC!r}, "
                f"found {magic!r}"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(
                f"checkpoint format version mismatch: expected {VERSION}, "
                f"found {version}"
            )
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "blob length"))
        try:
            blob = json.loads(_read_exact(fh, blob_len, "spec blob"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt spec blob in {path}: {exc}") from exc

        params = {}
        optim = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint: partial record header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "record name").decode("utf-8")
            (dtype_tag,) = struct.unpack("<B", _read_exact(fh, 1, "dtype tag"))
            if dtype_tag != DTYPE_F64:
                raise CheckpointError(
                    f"unknown dtype tag {dtype_tag} for record {name}"
                )
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, "extent"))[0]
                for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            payload = _read_exact(fh, count * 8, f"payload of {name}")
            arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            if name.startswith("optimizer."):
                optim[name[len("optimizer."):]] = arr
            else:
                params[name] = arr

    spec = ModelSpec.from_dict(blob["spec"])
    return CheckpointFile(
        spec=spec,
        step=blob.get("step", 0),
        vocab_hash=blob.get("vocab_hash", ""),
        params=params,
        optim=optim or None,
        optim_t=blob.get("optimizer_t"),
        extra=blob.get("extra", {}),
    )


def restore_model(model, ckpt, vocab_hash=None, allow_vocab_mismatch=False):
    """Copy checkpoint parameters into a model by name.

    Shared (non-target) names must all be present with exact shapes. Names
    under target.* that the checkpoint lacks keep their fresh
    initialization, which is what makes target swaps work.
    Returns (loaded_names, fresh_names).
    """
    if vocab_hash is not None and ckpt.vocab_hash and vocab_hash != ckpt.vocab_hash:
        if not allow_vocab_mismatch:
            raise CheckpointError(
                "vocabulary hash mismatch between checkpoint and current "
                "vocab; pass allow_vocab_mismatch to load anyway"
            )
        print("warning: vocabulary hash mismatch, loading anyway",
              file=sys.stderr)
    loaded, fresh = [], []
    for name, p in model.named_parameters():
        arr = ckpt.params.get(name)
        if arr is None:
            if name.startswith("target."):
                fresh.append(name)
                continue
            raise CheckpointError(
                f"checkpoint is missing shared parameter {name}"
            )
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arr.shape} vs "
                f"model {p.data.shape}"
            )
        p.data[...] = arr
        loaded.append(name)
    return loaded, fresh
