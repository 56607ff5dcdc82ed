"""Pool/test records, per-item layer stacks, and how they reach the engine.

Two sources of embeddings exist: a deterministic synthetic encoder (tests and
desk-scale runs) and external shard files produced by a real encoder. Both
end up as shard sets under the same interleaved partitioning: worker i of n
owns pool indices {i, i+n, i+2n, ...}, so remainders land on low ranks and no
padding is ever produced natively (padded shards from collective pipelines
are still accepted and trimmed on ingest).

The synthetic encoder is a pure function: each layer vector comes from a
stream seeded by (config seed, blake2b of the truncated text, layer id),
drawn standard-normal and L2-normalized. Identical text yields identical
vectors regardless of item index, which mirrors how a real encoder behaves.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import storage
from .errors import CoverageError, FormatError, InvalidArgumentError
from .kernels import normalize_rows

_SYNTH_TAG = 0x53594E54
_MASK64 = 0xFFFFFFFFFFFFFFFF

ENCODER_MODES = ("synthetic", "ingest")


@dataclass(frozen=True)
class PoolItem:
    """One candidate record: dense 0-based index, serialized text, and the
    length of its concatenated response text (the Length-baseline score)."""

    index: int
    text: str
    response_length: int = 0

    def __post_init__(self):
        if self.index < 0 or self.response_length < 0:
            raise InvalidArgumentError("index and response_length must be >= 0")


@dataclass(frozen=True)
class TestItem:
    """One test record; the answer is carried but never used for similarity."""

    index: int
    text: str
    answer: str | None = None


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "synthetic"
    v: int = 4096
    num_layers: int = 18
    layer_ids: tuple[int, ...] | None = None
    truncation_length: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ENCODER_MODES:
            raise InvalidArgumentError(f"unknown encoder mode {self.mode!r}")
        if self.v < 1:
            raise InvalidArgumentError("v must be >= 1")
        if self.num_layers < 1:
            raise InvalidArgumentError("num_layers must be >= 1")
        if self.truncation_length < 1:
            raise InvalidArgumentError("truncation_length must be >= 1")
        if self.layer_ids is None:
            object.__setattr__(self, "layer_ids", tuple(range(self.num_layers)))
        else:
            object.__setattr__(self, "layer_ids", tuple(int(i) for i in self.layer_ids))
        ids = self.layer_ids
        if len(ids) != self.num_layers:
            raise InvalidArgumentError(
                f"layer_ids has {len(ids)} entries but num_layers is {self.num_layers}"
            )
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise InvalidArgumentError("layer_ids must be strictly increasing")

    @property
    def dim(self) -> int:
        """Stored row width: all layers concatenated."""
        return self.v * self.num_layers

    def digest(self) -> str:
        payload = json.dumps(
            {
                "mode": self.mode,
                "v": self.v,
                "num_layers": self.num_layers,
                "layer_ids": list(self.layer_ids),
                "truncation_length": self.truncation_length,
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LayerStack:
    """Per-item hidden representations: num_layers rows of dimension v."""

    item_index: int
    layers: np.ndarray  # (num_layers, v) float32
    layer_ids: tuple[int, ...]

    def __post_init__(self):
        arr = np.asarray(self.layers, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise InvalidArgumentError("layers must be a non-empty (H, v) matrix")
        ids = tuple(int(i) for i in self.layer_ids)
        if len(ids) != arr.shape[0]:
            raise InvalidArgumentError("layer_ids length disagrees with layer count")
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise InvalidArgumentError("layer_ids must be strictly increasing")
        object.__setattr__(self, "layers", arr)
        object.__setattr__(self, "layer_ids", ids)

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def v(self) -> int:
        return self.layers.shape[1]

    def as_row(self) -> np.ndarray:
        """All layers concatenated into one (num_layers * v,) row."""
        return self.layers.reshape(-1).copy()


def interleaved_split(pool_size: int, n_workers: int) -> list[np.ndarray]:
    """Partition [0, pool_size) into per-worker strided index arrays.

    Worker i receives {i, i+n, i+2n, ...}; sizes differ by at most one, with
    the remainder on the lowest ranks.
    """
    if n_workers < 1:
        raise InvalidArgumentError(f"n_workers must be >= 1, got {n_workers}")
    if pool_size < 0:
        raise InvalidArgumentError(f"pool_size must be >= 0, got {pool_size}")
    return [np.arange(i, pool_size, n_workers, dtype=np.int64) for i in range(n_workers)]


def _layer_stream_seed(config: EncoderConfig, text: str, layer_id: int) -> np.random.SeedSequence:
    truncated = text[: config.truncation_length]
    digest = hashlib.blake2b(truncated.encode("utf-8"), digest_size=16).digest()
    lo = int.from_bytes(digest[:8], "little")
    hi = int.from_bytes(digest[8:], "little")
    return np.random.SeedSequence([_SYNTH_TAG, config.seed & _MASK64, lo, hi, int(layer_id)])


def synthetic_encode(text: str, item_index: int, config: EncoderConfig) -> LayerStack:
    """Deterministic stand-in for a real encoder.

    Pure in (text, config): repeated calls are bitwise equal, text beyond the
    truncation budget is ignored, and each layer vector is an independent
    unit-norm draw, so distinct layers of the same item decorrelate the way
    separate encoder layers do.
    """
    if config.mode != "synthetic":
        raise InvalidArgumentError("synthetic_encode requires an encoder config in synthetic mode")
    layers = np.empty((config.num_layers, config.v), dtype=np.float32)
    for row, layer_id in enumerate(config.layer_ids):
        rng = np.random.default_rng(_layer_stream_seed(config, text, layer_id))
        vec = rng.standard_normal(config.v, dtype=np.float32)
        layers[row] = normalize_rows(vec[None, :], check_finite=False)[0]
    return LayerStack(item_index=item_index, layers=layers, layer_ids=config.layer_ids)


def encode_rows(texts, config: EncoderConfig) -> np.ndarray:
    """Synthetic-encode texts into stacked rows of shape (n, num_layers * v)."""
    out = np.empty((len(texts), config.dim), dtype=np.float32)
    for i, text in enumerate(texts):
        out[i] = synthetic_encode(text, i, config).as_row()
    return out


# ---------------------------------------------------------------------------
# shard sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShardSet:
    """Validated descriptor over the shard files that cover one pool."""

    paths: tuple[str, ...]  # ordered by shard_index
    num_shards: int
    total_count: int
    dim: int
    layer_count: int
    counts: tuple[int, ...]  # real (unpadded) rows per shard
    pad_rows: tuple[int, ...] = field(default=())

    @property
    def v(self) -> int:
        return self.dim // self.layer_count

    def open(self, shard_index: int, *, mmap: bool = True):
        """Header and payload matrix of one shard (padding rows included)."""
        return storage.read_shard(self.paths[shard_index], mmap=mmap)

    def load_all(self, *, last_layer_only: bool = False) -> np.ndarray:
        """Materialize every row in original pool order."""
        width = self.v if last_layer_only else self.dim
        out = np.empty((self.total_count, width), dtype=np.float32)
        for i in range(self.num_shards):
            _, matrix = self.open(i)
            rows = np.asarray(matrix[: self.counts[i]], dtype=np.float32)
            if last_layer_only:
                rows = rows[:, (self.layer_count - 1) * self.v:]
            out[i::self.num_shards] = rows
        return out


def ingest_shards(shard_paths, expected: EncoderConfig) -> ShardSet:
    """Validate a set of shard files against the expected encoder geometry.

    Every shard header is checked for magic/version/dtype and byte length
    (via the storage reader), for a dimension consistent with the expected
    (v, num_layers), and for a complete, non-overlapping interleaved cover of
    the pool; padded trailing rows are accounted as padding, not data.
    """
    if not shard_paths:
        raise CoverageError("no shard paths given")
    headers: dict[int, storage.ShardHeader] = {}
    by_index: dict[int, str] = {}
    num_shards = None
    for path in shard_paths:
        header, _ = storage.read_shard(path)
        if header.dim != expected.dim or header.layer_count != expected.num_layers:
            raise FormatError(
                f"{path}: shard geometry dim={header.dim}, layers={header.layer_count} "
                f"does not match expected v={expected.v}, layers={expected.num_layers}"
            )
        if num_shards is None:
            num_shards = header.num_shards
        elif header.num_shards != num_shards:
            raise CoverageError(
                f"{path}: declares {header.num_shards} shards, others declare {num_shards}"
            )
        if header.shard_index in headers:
            raise CoverageError(
                f"{path}: shard_index {header.shard_index} already claimed by "
                f"{by_index[header.shard_index]}"
            )
        headers[header.shard_index] = header
        by_index[header.shard_index] = str(path)

    missing = sorted(set(range(num_shards)) - set(headers))
    if missing:
        raise CoverageError(f"missing shard indices {missing} of {num_shards}")

    counts = tuple(headers[i].real_count for i in range(num_shards))
    pads = tuple(headers[i].pad_rows for i in range(num_shards))
    total = sum(counts)
    expected_counts = [len(a) for a in interleaved_split(total, num_shards)]
    if list(counts) != expected_counts:
        raise CoverageError(
            f"shard row counts {list(counts)} are not an interleaved cover of "
            f"{total} items (expected {expected_counts})"
        )
    return ShardSet(
        paths=tuple(by_index[i] for i in range(num_shards)),
        num_shards=num_shards,
        total_count=total,
        dim=expected.dim,
        layer_count=expected.num_layers,
        counts=counts,
        pad_rows=pads,
    )


# ---------------------------------------------------------------------------
# line-delimited record input
# ---------------------------------------------------------------------------

def load_pool_items(path) -> list[PoolItem]:
    """Read pool records {id?, text, response_length?} from a JSONL file.

    When response_length is absent the serialized text length stands in (the
    turn structure is not recoverable at this point).
    """
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            text = rec["text"]
            items.append(
                PoolItem(
                    index=len(items),
                    text=text,
                    response_length=int(rec.get("response_length", len(text))),
                )
            )
    return items


def load_test_items(path) -> list[TestItem]:
    """Read test records {id?, text, answer?} from a JSONL file."""
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            items.append(TestItem(index=len(items), text=rec["text"], answer=rec.get("answer")))
    return items
