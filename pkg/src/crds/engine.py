"""Asymmetric distributed similarity: shard-local matmuls against a
broadcast test matrix, then gather, rearrange, persist.

The pool is orders of magnitude larger than the test set, so workers never
exchange pool data: each one streams its own shard in row blocks, builds the
configured representation (plain last layer, projection-concatenation,
whitened, or sign-binarized), normalizes if cosine is requested, and
multiplies against the full test representation matrix that every worker
shares read-only. The coordinator interleave-inverts the local score blocks
back to original pool order and writes the result.

"Workers" here are logical partitions (one per shard) executed by a thread
pool; because every product runs through the deterministic kernel and each
pool row's scores depend only on that row and the test matrix, the output
bytes are invariant to worker count, block size, and scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import storage
from .compression import ProjectionBank, binarize, compose_rows
from .errors import InvalidArgumentError, NumericError, StateError
from .kernels import matmul_nt, normalize_rows
from .provider import LayerStack, ShardSet, interleaved_split
from .whitening import WhiteningTransformer, whitening_apply

METHODS = (
    "plain",
    "crds_r",
    "crds_w",
    "binarized-pool",
    "binarized-test",
    "binarized-both",
)

DEFAULT_BLOCK_SIZE = 8192


@dataclass(eq=False)
class SimilarityMatrix:
    """|X| x |T| scores in original pool-row order, plus provenance."""

    scores: np.ndarray
    provenance: dict = field(default_factory=dict)
    provenance_missing: bool = False

    @property
    def rows(self) -> int:
        return self.scores.shape[0]

    @property
    def cols(self) -> int:
        return self.scores.shape[1]

    def save(self, path):
        storage.write_similarity(path, self.scores, self.provenance)


def load_similarity(path, *, mmap: bool = True) -> SimilarityMatrix:
    scores, provenance, missing = storage.read_similarity(path, mmap=mmap)
    return SimilarityMatrix(scores=scores, provenance=provenance, provenance_missing=missing)


@dataclass(frozen=True)
class WorkerPlan:
    """Logical partition of the pool: one worker per shard slot."""

    n_workers: int
    pool_size: int
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if self.n_workers < 1:
            raise InvalidArgumentError("n_workers must be >= 1")
        if self.pool_size < 0:
            raise InvalidArgumentError("pool_size must be >= 0")
        if self.block_size < 1:
            raise InvalidArgumentError("block_size must be >= 1")

    @property
    def assignments(self) -> list[np.ndarray]:
        return interleaved_split(self.pool_size, self.n_workers)


@dataclass(eq=False)
class MethodConfig:
    """Representation method plus its artifacts and the normalization flag."""

    method: str = "plain"
    normalize: bool = True
    bank: ProjectionBank | None = None
    transformer: WhiteningTransformer | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method == "crds_r" and self.bank is None:
            raise StateError("method crds_r requires a projection bank")
        if self.method == "crds_w" and self.transformer is None:
            raise StateError("method crds_w requires a fitted whitening transformer")


def l2_normalize(e) -> np.ndarray:
    """Unit-normalize a row vector; the zero vector maps to itself."""
    arr = np.asarray(e)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"expected a row vector, got shape {arr.shape}")
    return normalize_rows(arr[None, :])[0]


def similarity_block(pool_block, test_matrix) -> np.ndarray:
    """Blockwise score product: (m, d) x (|T|, d) -> (m, |T|).

    Inputs are expected pre-normalized when cosine scores are wanted.
    Accumulation order is fixed, so the result is bitwise reproducible and
    identical under any row blocking.
    """
    return matmul_nt(pool_block, test_matrix)


def rearrange_rows(blocks, plan: WorkerPlan) -> np.ndarray:
    """Invert the interleaved partition: row p comes from worker p mod n at
    local position floor(p / n). Trailing padded rows in a block are dropped."""
    assignments = plan.assignments
    if len(blocks) != plan.n_workers:
        raise InvalidArgumentError(
            f"got {len(blocks)} worker blocks for {plan.n_workers} workers"
        )
    cols = None
    for i, block in enumerate(blocks):
        block = np.asarray(block)
        if block.ndim != 2:
            raise InvalidArgumentError(f"worker {i} block is not 2-D")
        if cols is None:
            cols = block.shape[1]
        elif block.shape[1] != cols:
            raise InvalidArgumentError("worker blocks disagree on column count")
        if block.shape[0] < len(assignments[i]):
            raise InvalidArgumentError(
                f"worker {i} block has {block.shape[0]} rows, needs {len(assignments[i])}"
            )
    out = np.empty((plan.pool_size, cols if cols is not None else 0), dtype=np.float32)
    for i, block in enumerate(blocks):
        take = len(assignments[i])
        out[assignments[i]] = np.asarray(block, dtype=np.float32)[:take]
    return out


# ---------------------------------------------------------------------------
# representation building
# ---------------------------------------------------------------------------

def _last_layer(rows: np.ndarray, v: int, layer_count: int) -> np.ndarray:
    return np.ascontiguousarray(rows[:, (layer_count - 1) * v:], dtype=np.float32)


def transform_rows(rows: np.ndarray, config: MethodConfig, v: int, layer_count: int,
                   side: str) -> np.ndarray:
    """Build the similarity representation for a block of stored rows.

    ``side`` is "pool" or "test"; the binarized variants apply the sign map
    to one side or both, every other method treats the sides identically.
    """
    if side not in ("pool", "test"):
        raise InvalidArgumentError(f"side must be 'pool' or 'test', got {side!r}")
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[1] != v * layer_count:
        raise InvalidArgumentError(
            f"rows of width {rows.shape[-1]} do not hold {layer_count} layers of dim {v}"
        )
    method = config.method
    if method == "crds_r":
        rep = compose_rows(rows, config.bank)
    elif method == "crds_w":
        rep = whitening_apply(_last_layer(rows, v, layer_count), config.transformer)
    else:
        rep = _last_layer(rows, v, layer_count)
        wants_sign = (
            method == "binarized-both"
            or (method == "binarized-pool" and side == "pool")
            or (method == "binarized-test" and side == "test")
        )
        if wants_sign:
            rep = binarize(rep)
    if config.normalize:
        rep = normalize_rows(rep)
    return np.ascontiguousarray(rep, dtype=np.float32)


def _check_geometry(shards: ShardSet, config: MethodConfig):
    if config.method == "crds_r":
        bank = config.bank
        if bank.v != shards.v or bank.num_layers != shards.layer_count:
            raise InvalidArgumentError(
                f"projection bank geometry ({bank.num_layers} x {bank.v}) does not "
                f"match shards ({shards.layer_count} x {shards.v})"
            )
    if config.method == "crds_w" and config.transformer.v != shards.v:
        raise InvalidArgumentError(
            f"whitening transformer expects v={config.transformer.v}, shards hold v={shards.v}"
        )


def test_rows_from_stacks(stacks) -> np.ndarray:
    """Gather test LayerStacks into one raw (|T|, H*v) matrix."""
    if len(stacks) == 0:
        raise InvalidArgumentError("test set must be non-empty")
    return np.stack([s.as_row() for s in stacks])


# ---------------------------------------------------------------------------
# the full distributed computation
# ---------------------------------------------------------------------------

def compute_similarity(shards: ShardSet, tests, config: MethodConfig,
                       plan: WorkerPlan | None = None, *, exec_workers: int | None = None,
                       out_path=None, provenance: dict | None = None) -> SimilarityMatrix:
    """Score every pool item against every test item.

    ``tests`` is either a raw (|T|, H*v) row matrix or a sequence of
    LayerStacks. The test side is transformed once with the same method as
    the pool side and shared read-only by all workers. Output bytes are
    independent of worker count, block size, execution concurrency, and
    scheduling.
    """
    if plan is None:
        plan = WorkerPlan(n_workers=shards.num_shards, pool_size=shards.total_count)
    if plan.n_workers != shards.num_shards or plan.pool_size != shards.total_count:
        raise InvalidArgumentError(
            f"plan ({plan.n_workers} workers, {plan.pool_size} rows) does not match "
            f"shard set ({shards.num_shards} shards, {shards.total_count} rows)"
        )
    _check_geometry(shards, config)

    if isinstance(tests, np.ndarray):
        test_raw = np.asarray(tests, dtype=np.float32)
    else:
        test_raw = test_rows_from_stacks(list(tests))
    if test_raw.ndim != 2 or test_raw.shape[0] == 0:
        raise InvalidArgumentError("test set must be a non-empty 2-D row matrix")
    if test_raw.shape[1] != shards.dim:
        raise InvalidArgumentError(
            f"test rows of width {test_raw.shape[1]} do not match shard dim {shards.dim}"
        )

    test_rep = transform_rows(test_raw, config, shards.v, shards.layer_count, side="test")

    def worker(i: int) -> np.ndarray:
        _, matrix = shards.open(i)
        real = shards.counts[i]
        local = np.empty((real, test_rep.shape[0]), dtype=np.float32)
        for start in range(0, real, plan.block_size):
            stop = min(start + plan.block_size, real)
            block = np.ascontiguousarray(matrix[start:stop], dtype=np.float32)
            rep = transform_rows(block, config, shards.v, shards.layer_count, side="pool")
            local[start:stop] = similarity_block(rep, test_rep)
        return local

    n_exec = exec_workers or min(plan.n_workers, os.cpu_count() or 1)
    if n_exec > 1 and plan.n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_exec) as pool:
            blocks = list(pool.map(worker, range(plan.n_workers)))
    else:
        blocks = [worker(i) for i in range(plan.n_workers)]

    scores = rearrange_rows(blocks, plan)
    if not np.isfinite(scores).all():
        raise NumericError("similarity computation produced non-finite scores")

    prov = {
        "method": config.method,
        "normalize": config.normalize,
        "rows": int(scores.shape[0]),
        "cols": int(scores.shape[1]),
        "representation_dim": int(test_rep.shape[1]),
        "num_shards": shards.num_shards,
    }
    if config.method == "crds_r":
        prov["projection"] = {
            "seed": config.bank.seed,
            "w": config.bank.w,
            "num_layers": config.bank.num_layers,
            "entry_mode": config.bank.entry_mode,
        }
    if config.method == "crds_w":
        prov["whitening"] = {
            "beta": config.transformer.beta,
            "fit_count": config.transformer.fit_count,
        }
    if provenance:
        prov.update(provenance)

    result = SimilarityMatrix(scores=scores, provenance=prov)
    if out_path is not None:
        result.save(out_path)
    return result
