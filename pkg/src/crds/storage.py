"""Bit-exact binary file formats for shards, transformers, and score matrices.

All three formats share the same skeleton: a fixed 64-byte little-endian
header (struct-packed, no implicit padding) followed by a row-major float32
payload. Declared sizes are validated against the actual file length before
any payload byte is touched; size arithmetic runs on Python ints so huge
declared dimensions fail loudly instead of wrapping.

    shard        magic CRDS: count x dim embedding rows owned by one worker,
                 plus its (shard_index, num_shards) slot, trailing pad_rows,
                 and the per-item layer_count
    transformer  magic CRDW: mean (v floats) then W_beta (v x beta, row-major)
    similarity   magic CRSM: rows x cols score matrix; provenance rides in a
                 human-readable JSON sidecar at <path>.provenance.json

Fixed layout (rather than a self-describing container) keeps zero-copy
memory-mapped block reads possible on gigabyte-scale matrices.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, LengthError, VersionError
from .whitening import WhiteningTransformer

HEADER_SIZE = 64
SHARD_MAGIC = b"CRDS"
TRANSFORMER_MAGIC = b"CRDW"
SIMILARITY_MAGIC = b"CRSM"
FORMAT_VERSION = 1
DTYPE_F32 = 1

_SHARD_STRUCT = struct.Struct("<4sHHQIIIIH30x")
_TRANSFORMER_STRUCT = struct.Struct("<4sHIIQ42x")
_SIMILARITY_STRUCT = struct.Struct("<4sHQI46x")

assert _SHARD_STRUCT.size == HEADER_SIZE
assert _TRANSFORMER_STRUCT.size == HEADER_SIZE
assert _SIMILARITY_STRUCT.size == HEADER_SIZE


@dataclass(frozen=True)
class ShardHeader:
    count: int
    dim: int
    shard_index: int
    num_shards: int
    pad_rows: int = 0
    layer_count: int = 1
    version: int = FORMAT_VERSION
    dtype_code: int = DTYPE_F32

    @property
    def real_count(self) -> int:
        """Rows that carry data; trailing pad rows excluded."""
        return self.count - self.pad_rows


def _header_and_size(path) -> tuple[bytes, int]:
    p = Path(path)
    size = p.stat().st_size
    if size < HEADER_SIZE:
        raise FormatError(f"{p}: file shorter than the {HEADER_SIZE}-byte header")
    with open(p, "rb") as f:
        return f.read(HEADER_SIZE), size


def _check_magic_version(path, magic, expected_magic, version, kind: str):
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic {magic!r} for {kind} file")
    if version > FORMAT_VERSION:
        raise VersionError(f"{path}: {kind} version {version} newer than supported {FORMAT_VERSION}")


def _check_payload_length(path, size: int, expected_floats: int, what: str):
    expected = HEADER_SIZE + expected_floats * 4  # Python int: no wraparound
    if size != expected:
        raise LengthError(
            f"{path}: {what} declares {expected_floats} floats "
            f"({expected} bytes total) but file holds {size} bytes"
        )


def _map_payload(path, count: int, dim: int, mmap: bool) -> np.ndarray:
    if count == 0:
        return np.empty((0, dim), dtype=np.float32)
    if mmap:
        return np.memmap(path, dtype="<f4", mode="r", offset=HEADER_SIZE, shape=(count, dim))
    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        return np.fromfile(f, dtype="<f4", count=count * dim).reshape(count, dim)


def _write_payload(f, matrix: np.ndarray):
    np.ascontiguousarray(matrix, dtype="<f4").tofile(f)


# ---------------------------------------------------------------------------
# embedding shards
# ---------------------------------------------------------------------------

def write_shard(path, matrix, *, shard_index: int, num_shards: int,
                pad_rows: int = 0, layer_count: int = 1) -> ShardHeader:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise InvalidArgumentError(f"shard matrix must be 2-D, got shape {matrix.shape}")
    count, dim = matrix.shape
    if not (0 <= shard_index < num_shards):
        raise InvalidArgumentError(f"shard_index {shard_index} outside [0, {num_shards})")
    if not (0 <= pad_rows <= count):
        raise InvalidArgumentError(f"pad_rows {pad_rows} outside [0, count={count}]")
    if layer_count < 1 or (dim % layer_count) != 0:
        raise InvalidArgumentError(f"layer_count {layer_count} does not divide dim {dim}")
    header = ShardHeader(count=count, dim=dim, shard_index=shard_index,
                         num_shards=num_shards, pad_rows=pad_rows, layer_count=layer_count)
    packed = _SHARD_STRUCT.pack(SHARD_MAGIC, header.version, header.dtype_code,
                                count, dim, shard_index, num_shards, pad_rows, layer_count)
    with open(path, "wb") as f:
        f.write(packed)
        _write_payload(f, matrix)
    return header


def read_shard(path, *, mmap: bool = True) -> tuple[ShardHeader, np.ndarray]:
    raw, size = _header_and_size(path)
    magic, version, dtype_code, count, dim, shard_index, num_shards, pad_rows, layer_count = (
        _SHARD_STRUCT.unpack(raw)
    )
    _check_magic_version(path, magic, SHARD_MAGIC, version, "shard")
    if dtype_code != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    if num_shards < 1 or shard_index >= num_shards:
        raise FormatError(f"{path}: shard slot {shard_index}/{num_shards} is malformed")
    if pad_rows > count:
        raise FormatError(f"{path}: pad_rows {pad_rows} exceeds count {count}")
    _check_payload_length(path, size, count * dim, "shard header")
    header = ShardHeader(count=count, dim=dim, shard_index=shard_index,
                         num_shards=num_shards, pad_rows=pad_rows,
                         layer_count=layer_count, version=version, dtype_code=dtype_code)
    return header, _map_payload(path, count, dim, mmap)


# ---------------------------------------------------------------------------
# whitening transformers
# ---------------------------------------------------------------------------

def write_transformer(path, transformer: WhiteningTransformer):
    v, beta = transformer.v, transformer.beta
    packed = _TRANSFORMER_STRUCT.pack(TRANSFORMER_MAGIC, FORMAT_VERSION,
                                      v, beta, transformer.fit_count)
    with open(path, "wb") as f:
        f.write(packed)
        _write_payload(f, transformer.mean.reshape(1, v))
        _write_payload(f, transformer.matrix)


def read_transformer(path) -> WhiteningTransformer:
    raw, size = _header_and_size(path)
    magic, version, v, beta, fit_count = _TRANSFORMER_STRUCT.unpack(raw)
    _check_magic_version(path, magic, TRANSFORMER_MAGIC, version, "transformer")
    if v < 1 or beta < 1 or beta > v:
        raise FormatError(f"{path}: invalid dimensions v={v}, beta={beta}")
    _check_payload_length(path, size, v + v * beta, "transformer header")
    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        mean = np.fromfile(f, dtype="<f4", count=v)
        matrix = np.fromfile(f, dtype="<f4", count=v * beta).reshape(v, beta)
    return WhiteningTransformer(v=v, beta=beta, mean=mean, matrix=matrix,
                                fit_count=fit_count, eigenvalues=None)


# ---------------------------------------------------------------------------
# similarity matrices
# ---------------------------------------------------------------------------

def sidecar_path(path) -> Path:
    return Path(str(path) + ".provenance.json")


def write_similarity(path, scores, provenance: dict | None = None):
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise InvalidArgumentError(f"similarity matrix must be 2-D, got shape {scores.shape}")
    rows, cols = scores.shape
    packed = _SIMILARITY_STRUCT.pack(SIMILARITY_MAGIC, FORMAT_VERSION, rows, cols)
    with open(path, "wb") as f:
        f.write(packed)
        _write_payload(f, scores)
    sidecar_path(path).write_text(
        json.dumps(provenance or {}, indent=2, sort_keys=True) + "\n"
    )


def read_similarity(path, *, mmap: bool = True) -> tuple[np.ndarray, dict, bool]:
    """Read a score matrix; returns (scores, provenance, provenance_missing).

    A missing sidecar is not an error: the read succeeds with empty
    provenance and the flag set (a warning is emitted).
    """
    raw, size = _header_and_size(path)
    magic, version, rows, cols = _SIMILARITY_STRUCT.unpack(raw)
    _check_magic_version(path, magic, SIMILARITY_MAGIC, version, "similarity")
    _check_payload_length(path, size, rows * cols, "similarity header")
    scores = _map_payload(path, rows, cols, mmap)
    side = sidecar_path(path)
    if side.exists():
        return scores, json.loads(side.read_text()), False
    warnings.warn(f"{path}: provenance sidecar missing", stacklevel=2)
    return scores, {}, True
