"""On-disk formats: checkpoint containers and motion-sequence files.

Checkpoint layout::

    b"IFCK" | u32 manifest length | manifest (UTF-8 JSON) | payload

The payload is every tensor as contiguous little-endian float32, in manifest
order. Each manifest record carries name, shape, dtype, byte offset, byte
length and a CRC-32 (zlib) of the tensor's bytes.

Motion file layout: a 16-byte header ``<4sHIHH2x`` (magic b"IFMM", version,
frame count, dimension, frame rate, two reserved bytes) followed by
row-major little-endian float32 frames.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .motion import MOTION_DIM, MotionSequence

CKPT_MAGIC = b"IFCK"
CKPT_VERSION = 1
MOTION_MAGIC = b"IFMM"
MOTION_VERSION = 1
MOTION_HEADER = struct.Struct("<4sHIHH2x")


class CheckpointError(ValueError):
    pass


class CorruptManifestError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    def __init__(self, tensor: str):
        super().__init__(f"checksum mismatch in tensor '{tensor}'")
        self.tensor = tensor


class ConfigMismatchError(CheckpointError):
    def __init__(self, key: str, stored, expected):
        super().__init__(f"config mismatch at '{key}': checkpoint has {stored!r}, model expects {expected!r}")
        self.key = key


class MotionFileError(ValueError):
    pass


class BadMagicError(MotionFileError):
    pass


class UnsupportedVersionError(MotionFileError):
    pass


class TruncatedPayloadError(MotionFileError):
    pass


def save_checkpoint(params: dict, config: dict, path, kind: str = "model") -> None:
    """Write ``params`` (name -> array-like) and a JSON-able ``config`` snapshot."""
    records, chunks, offset = [], [], 0
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value))
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor '{name}' has non-finite values")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        records.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "f32",
            "offset": offset,
            "length": len(raw),
            "crc32": zlib.crc32(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format_version": CKPT_VERSION, "kind": kind, "config": config, "tensors": records}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for raw in chunks:
            f.write(raw)


def _read_manifest(data: bytes) -> tuple[dict, memoryview]:
    if len(data) < 8 or data[:4] != CKPT_MAGIC:
        raise CorruptManifestError("not a checkpoint container (bad magic)")
    (n,) = struct.unpack("<I", data[4:8])
    if 8 + n > len(data):
        raise CorruptManifestError("manifest length runs past end of file")
    try:
        manifest = json.loads(data[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptManifestError(f"manifest does not parse: {e}") from None
    for key in ("format_version", "config", "tensors"):
        if key not in manifest:
            raise CorruptManifestError(f"manifest missing key '{key}'")
    if manifest["format_version"] != CKPT_VERSION:
        raise CorruptManifestError(f"unsupported checkpoint version {manifest['format_version']}")
    return manifest, memoryview(data)[8 + n :]


def _check_layout(records: list, payload_len: int) -> None:
    end = 0
    for rec in sorted(records, key=lambda r: r.get("offset", -1)):
        name = rec.get("name", "?")
        try:
            off, length, shape = int(rec["offset"]), int(rec["length"]), rec["shape"]
            int(rec["crc32"])
        except (KeyError, TypeError, ValueError):
            raise CorruptManifestError(f"tensor '{name}': incomplete record") from None
        if rec.get("dtype") != "f32":
            raise CorruptManifestError(f"tensor '{name}': unsupported dtype {rec.get('dtype')!r}")
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CorruptManifestError(f"tensor '{name}': length {length} does not match shape {shape}")
        if off < end:
            raise CorruptManifestError(f"tensor '{name}': overlaps previous tensor")
        if off + length > payload_len:
            raise CorruptManifestError(f"tensor '{name}': extends past end of payload")
        end = off + length


def _compare_config(stored, expected, prefix: str = "") -> None:
    if isinstance(expected, dict) and isinstance(stored, dict):
        for key in sorted(set(stored) | set(expected)):
            name = f"{prefix}.{key}" if prefix else key
            if key not in stored or key not in expected:
                raise ConfigMismatchError(name, stored.get(key), expected.get(key))
            _compare_config(stored[key], expected[key], name)
    elif stored != expected:
        raise ConfigMismatchError(prefix or "<root>", stored, expected)


def load_checkpoint(path, expected_config: dict | None = None) -> tuple[dict, dict]:
    """-> (name -> float32 array, config). Verifies layout and every CRC."""
    data = Path(path).read_bytes()
    manifest, payload = _read_manifest(data)
    records = manifest["tensors"]
    _check_layout(records, len(payload))
    if expected_config is not None:
        _compare_config(json.loads(json.dumps(manifest["config"])), json.loads(json.dumps(expected_config)))
    params = {}
    for rec in records:
        raw = bytes(payload[rec["offset"] : rec["offset"] + rec["length"]])
        if zlib.crc32(raw) != rec["crc32"]:
            raise ChecksumError(rec["name"])
        params[rec["name"]] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(rec["shape"])
    return params, manifest["config"]


def checkpoint_kind(path) -> str:
    manifest, _ = _read_manifest(Path(path).read_bytes())
    return manifest.get("kind", "model")


def write_motion_file(seq, path, frame_rate: int | None = None) -> None:
    if not isinstance(seq, MotionSequence):
        raw = np.asarray(seq)
        if raw.ndim != 2 or raw.shape[1] != MOTION_DIM:
            raise MotionFileError(f"motion frames must be (n, {MOTION_DIM}), got {raw.shape}")
        seq = MotionSequence(raw, frame_rate or 25)
    frames = np.asarray(seq.frames)
    if frames.ndim != 2 or frames.shape[1] != MOTION_DIM:
        raise MotionFileError(f"motion frames must be (n, {MOTION_DIM}), got {frames.shape}")
    header = MOTION_HEADER.pack(MOTION_MAGIC, MOTION_VERSION, len(frames), MOTION_DIM, frame_rate or seq.frame_rate)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_motion_file(path) -> MotionSequence:
    data = Path(path).read_bytes()
    if len(data) < MOTION_HEADER.size:
        raise TruncatedPayloadError(f"file is {len(data)} bytes, shorter than the 16-byte header")
    magic, version, n, dim, fps = MOTION_HEADER.unpack_from(data)
    if magic != MOTION_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MOTION_MAGIC!r}")
    if version != MOTION_VERSION:
        raise UnsupportedVersionError(f"motion file version {version} not supported")
    if dim != MOTION_DIM:
        raise MotionFileError(f"dimension {dim} != {MOTION_DIM}")
    expected = MOTION_HEADER.size + 4 * n * dim
    if len(data) < expected:
        raise TruncatedPayloadError(f"payload has {len(data) - MOTION_HEADER.size} bytes, header promises {4 * n * dim}")
    if len(data) > expected:
        raise MotionFileError(f"{len(data) - expected} trailing bytes after payload")
    frames = np.frombuffer(data, dtype="<f4", offset=MOTION_HEADER.size).reshape(n, dim)
    return MotionSequence(frames.astype(np.float32), fps)
