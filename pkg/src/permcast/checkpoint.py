"""Binary checkpoint container: named float tensors with a payload CRC.

Layout, all little-endian:

    magic   4 bytes  b"CPIR"
    version u16
    count   u32
    entries, each:
        name_len u16, name UTF-8 bytes
        rank     u8
        dims     rank x u64
        dtype    u8 (0 = float32, 1 = float64)
        payload  raw little-endian values
    crc32   u32 over the entries region

Checkpoint metadata that is not itself a tensor (model kind, freeze flags,
normalization stats, config digest, structural sizes) rides along as
reserved ``meta:*`` entries; strings are stored as byte-valued arrays. A
save -> load -> save cycle is byte-identical.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointCorruptionError
from .trainer import CHECKPOINT_FORMAT_VERSION, Checkpoint

MAGIC = b"CPIR"
_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _encode_entry(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype not in _DTYPE_TAGS:
        raise ValueError(f"entry {name!r}: unsupported dtype {arr.dtype}")
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    head += struct.pack("<B", _DTYPE_TAGS[arr.dtype])
    payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    return head + payload


def write_entries(path, entries: dict[str, np.ndarray]) -> None:
    body = b"".join(_encode_entry(k, np.asarray(v)) for k, v in entries.items())
    blob = (
        MAGIC
        + struct.pack("<H", CHECKPOINT_FORMAT_VERSION)
        + struct.pack("<I", len(entries))
        + body
        + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    )
    Path(path).write_bytes(blob)


def read_entries(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise CheckpointCorruptionError(f"{path}: bad magic, not a checkpoint file")
    version = struct.unpack_from("<H", raw, 4)[0]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointCorruptionError(
            f"{path}: format version {version} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    count = struct.unpack_from("<I", raw, 6)[0]
    body = raw[10:-4]
    stored_crc = struct.unpack_from("<I", raw, len(raw) - 4)[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CheckpointCorruptionError(f"{path}: payload CRC mismatch")

    entries: dict[str, np.ndarray] = {}
    offset = 0
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", body, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}Q", body, offset) if rank else ()
            offset += 8 * rank
            (tag,) = struct.unpack_from("<B", body, offset)
            offset += 1
            dtype = _TAG_DTYPES[tag]
            n_elem = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(body, dtype=dtype, count=n_elem, offset=offset)
            offset += n_elem * dtype.itemsize
            entries[name] = arr.reshape(dims).copy()
        except (struct.error, KeyError, ValueError) as err:
            raise CheckpointCorruptionError(f"{path}: truncated or malformed entry: {err}") from None
    if offset != len(body):
        raise CheckpointCorruptionError(f"{path}: trailing bytes after last entry")
    return entries


def _string_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _array_to_string(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr, dtype=np.float64).astype(np.uint8)).decode("utf-8")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries: dict[str, np.ndarray] = {}
    entries["meta:kind"] = _string_to_array(ckpt.model_kind)
    entries["meta:config_digest"] = _string_to_array(ckpt.config_digest)
    for flag, value in sorted(ckpt.freeze_flags.items()):
        entries[f"meta:freeze.{flag}"] = np.asarray([1.0 if value else 0.0])
    entries["meta:norm.mean"] = np.asarray(ckpt.norm_mean, dtype=np.float64)
    entries["meta:norm.std"] = np.asarray(ckpt.norm_std, dtype=np.float64)
    for key, value in sorted(ckpt.structure.items()):
        entries[f"meta:structure.{key}"] = np.asarray([float(value)])
    for name, arr in ckpt.tensors.items():
        entries[name] = arr
    write_entries(path, entries)


def load_checkpoint(path) -> Checkpoint:
    entries = read_entries(path)
    try:
        kind = _array_to_string(entries.pop("meta:kind"))
        digest = _array_to_string(entries.pop("meta:config_digest"))
        mean = entries.pop("meta:norm.mean")
        std = entries.pop("meta:norm.std")
    except KeyError as err:
        raise CheckpointCorruptionError(f"{path}: missing metadata entry {err}") from None
    freeze_flags: dict[str, bool] = {}
    structure: dict[str, float] = {}
    for name in list(entries):
        if name.startswith("meta:freeze."):
            freeze_flags[name[len("meta:freeze."):]] = bool(entries.pop(name)[0])
        elif name.startswith("meta:structure."):
            structure[name[len("meta:structure."):]] = float(entries.pop(name)[0])
    return Checkpoint(
        tensors=entries,
        freeze_flags=freeze_flags,
        norm_mean=mean,
        norm_std=std,
        config_digest=digest,
        model_kind=kind,
        structure=structure,
    )
