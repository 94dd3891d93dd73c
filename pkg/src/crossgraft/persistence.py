"""Versioned single-file checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic  b"XGRAFTCK"
    bytes 8..11   format version, uint32
    bytes 12..43  sha256 over everything that follows (header length,
                  header, payload)
    bytes 44..51  header length, uint64
    ...           header: UTF-8 JSON with sorted keys
    ...           payload: concatenated raw array blobs

The header carries the config snapshot, the step counter, JSON-able RNG
state, and a blob index (name, dtype, shape, offset into the payload,
nbytes). Payload floats are always float32 — wider compute precision is
quantized at this boundary. Writes are atomic (temp file + rename), and
identical states produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    IntegrityError,
    PersistenceError,
    UnsupportedVersionError,
)

MAGIC = b"XGRAFTCK"
CHECKPOINT_VERSION = 1

_DTYPES = {"float32": "<f4", "int64": "<i8", "uint8": "|u1"}


@dataclass
class CheckpointContents:
    """Raw, framework-free view of everything a checkpoint stores."""

    config: dict
    step: int
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def _canonical_dtype(arr: np.ndarray) -> tuple[str, np.ndarray]:
    if arr.dtype.kind == "f":
        return "float32", arr.astype("<f4", copy=False)
    if arr.dtype.kind in "iu":
        if arr.dtype == np.uint8:
            return "uint8", arr
        return "int64", arr.astype("<i8", copy=False)
    raise PersistenceError(f"cannot serialize array of dtype {arr.dtype}")


def write_checkpoint(contents: CheckpointContents, path: str | Path) -> str:
    """Atomically write one checkpoint; returns the content digest (hex)."""
    path = Path(path)
    index = []
    payload_parts = []
    offset = 0
    for name, arr in contents.tensors.items():
        arr = np.ascontiguousarray(arr)
        dtype, arr = _canonical_dtype(arr)
        raw = arr.tobytes()
        index.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload_parts.append(raw)
        offset += len(raw)

    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": contents.config,
        "step": contents.step,
        "meta": contents.meta,
        "blobs": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(payload_parts)

    hashed = struct.pack("<Q", len(header_bytes)) + header_bytes + payload
    digest = hashlib.sha256(hashed).digest()

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", CHECKPOINT_VERSION))
            f.write(digest)
            f.write(hashed)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return digest.hex()


def _read_raw(path: Path) -> tuple[dict, bytes]:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise PersistenceError(f"cannot read checkpoint {path}: {e}") from e
    if len(data) < 52 or data[:8] != MAGIC:
        raise PersistenceError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack("<I", data[8:12])
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"{path} uses checkpoint format version {version}; "
            f"this build supports version {CHECKPOINT_VERSION}"
        )
    stored_digest = data[12:44]
    hashed = data[44:]
    if hashlib.sha256(hashed).digest() != stored_digest:
        raise IntegrityError(f"checkpoint digest mismatch for {path}")
    (header_len,) = struct.unpack("<Q", hashed[:8])
    header = json.loads(hashed[8 : 8 + header_len].decode())
    payload = hashed[8 + header_len :]
    return header, payload


def read_index(path: str | Path) -> dict:
    """Header only: config snapshot, step, and the blob index."""
    header, _ = _read_raw(Path(path))
    return header


def read_checkpoint(path: str | Path) -> CheckpointContents:
    header, payload = _read_raw(Path(path))
    tensors = {}
    for entry in header["blobs"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = arr
    return CheckpointContents(
        config=header["config"],
        step=header["step"],
        tensors=tensors,
        meta=header.get("meta", {}),
    )


ARCHITECTURE_FIELDS = (
    "source",
    "target",
    "split",
    "latent_dim",
    "enc_filters",
    "enc_kernels",
    "dec_filters",
    "gen_filters",
    "gen_blocks",
    "disc_filters",
    "feature_dim",
)


def check_architecture(saved_config: dict, expected_config) -> None:
    """Raise if a checkpoint's architecture cannot host the expected config."""
    expected = expected_config.to_dict()
    mismatched = [
        f
        for f in ARCHITECTURE_FIELDS
        if saved_config.get(f) != expected.get(f)
    ]
    if mismatched:
        details = ", ".join(
            f"{f}: saved={saved_config.get(f)!r} expected={expected.get(f)!r}"
            for f in mismatched
        )
        raise ConfigurationError(f"checkpoint is incompatible with the given config ({details})")


def save_checkpoint(state, path: str | Path) -> str:
    """Serialize a TrainState; returns the content digest."""
    return write_checkpoint(state.to_contents(), path)


def load_checkpoint(path: str | Path, expected_config=None):
    """Rebuild a TrainState from disk, optionally validating compatibility."""
    from .training import TrainState

    contents = read_checkpoint(path)
    if expected_config is not None:
        check_architecture(contents.config, expected_config)
    return TrainState.from_contents(contents)


def format_index(header: dict) -> str:
    """Human-readable dump of a checkpoint index (the `inspect` command)."""
    lines = [
        f"format_version: {header['format_version']}",
        f"step: {header['step']}",
        f"scenario: {header['config'].get('source')} -> {header['config'].get('target')}",
        f"split: {header['config'].get('split')}",
        f"blobs: {len(header['blobs'])}",
    ]
    for entry in header["blobs"]:
        shape = "x".join(str(d) for d in entry["shape"]) or "scalar"
        lines.append(
            f"  {entry['name']}  {entry['dtype']}[{shape}]  "
            f"offset={entry['offset']} nbytes={entry['nbytes']}"
        )
    return "\n".join(lines)
