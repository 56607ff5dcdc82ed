"""Turning a score matrix into a selected subset.

Round-robin greedy retrieval cycles over test columns; each step the current
test claims the highest-scoring pool row not yet selected (ties broken by
lowest pool index) until k rows are taken, so per-test claim counts never
differ by more than one. Random and response-length selectors provide the
reference baselines, and an overlap report compares any two selections.

The implementation pre-sorts each column once and walks pointers with a
selected-row bitmap; correctness is pinned to an exhaustive re-scan oracle in
the tests, not to this data structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import SimilarityMatrix
from .errors import InvalidArgumentError
from .provider import PoolItem

_RANDOM_TAG = 0x53454C52
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class SelectionEntry:
    rank: int
    pool_index: int
    test_index: int | None
    score: float | None


@dataclass(eq=False)
class SelectionResult:
    entries: tuple[SelectionEntry, ...]
    k: int
    method: str
    pool_size: int
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.entries) != self.k:
            raise InvalidArgumentError(f"{len(self.entries)} entries for budget k={self.k}")
        ranks = [e.rank for e in self.entries]
        if ranks != list(range(self.k)):
            raise InvalidArgumentError("entry ranks must be dense 0..k-1 in order")
        idx = [e.pool_index for e in self.entries]
        if len(set(idx)) != len(idx):
            raise InvalidArgumentError("pool indices must be unique")

    @property
    def pool_indices(self) -> list[int]:
        return [e.pool_index for e in self.entries]

    def per_test_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for e in self.entries:
            if e.test_index is not None:
                counts[e.test_index] = counts.get(e.test_index, 0) + 1
        return counts


def _scores_array(sim) -> np.ndarray:
    scores = sim.scores if isinstance(sim, SimilarityMatrix) else np.asarray(sim)
    if scores.ndim != 2:
        raise InvalidArgumentError(f"score matrix must be 2-D, got shape {scores.shape}")
    return scores


def round_robin_select(sim, k: int) -> SelectionResult:
    """Cycle test columns; each picks its best unselected pool row."""
    scores = _scores_array(sim)
    rows, cols = scores.shape
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if k > rows:
        raise InvalidArgumentError(f"k={k} exceeds pool size {rows}")
    if cols < 1:
        raise InvalidArgumentError("score matrix has no test columns")

    # stable argsort of the negated column = descending score, ties by index;
    # int32 halves the order table at multi-million-row pool scale
    order = np.empty((cols, rows), dtype=np.int32)
    for j in range(cols):
        order[j] = np.argsort(-scores[:, j], kind="stable")
    pointers = np.zeros(cols, dtype=np.int64)
    selected = np.zeros(rows, dtype=bool)

    entries = []
    for rank in range(k):
        j = rank % cols
        p = pointers[j]
        while selected[order[j, p]]:
            p += 1
        pointers[j] = p + 1
        row = int(order[j, p])
        selected[row] = True
        entries.append(SelectionEntry(rank=rank, pool_index=row, test_index=j,
                                      score=float(scores[row, j])))
    return SelectionResult(entries=tuple(entries), k=k, method="round_robin", pool_size=rows)


def random_select(pool_size: int, k: int, seed: int) -> SelectionResult:
    """Uniform sample without replacement, deterministic under seed."""
    if k > pool_size:
        raise InvalidArgumentError(f"k={k} exceeds pool size {pool_size}")
    if k < 0:
        raise InvalidArgumentError("k must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([_RANDOM_TAG, seed & _MASK64]))
    picked = rng.choice(pool_size, size=k, replace=False)
    entries = tuple(
        SelectionEntry(rank=r, pool_index=int(p), test_index=None, score=None)
        for r, p in enumerate(picked)
    )
    return SelectionResult(entries=entries, k=k, method="random", pool_size=pool_size,
                           seeds={"selection": seed})


def length_select(pool, k: int) -> SelectionResult:
    """Top-k by response length, descending; ties go to the lowest index."""
    if pool and isinstance(pool[0], PoolItem):
        lengths = np.asarray([item.response_length for item in pool], dtype=np.int64)
    else:
        lengths = np.asarray(pool, dtype=np.int64)
    pool_size = len(lengths)
    if k > pool_size:
        raise InvalidArgumentError(f"k={k} exceeds pool size {pool_size}")
    if k < 0:
        raise InvalidArgumentError("k must be >= 0")
    order = np.argsort(-lengths, kind="stable")[:k]
    entries = tuple(
        SelectionEntry(rank=r, pool_index=int(p), test_index=None, score=float(lengths[p]))
        for r, p in enumerate(order)
    )
    return SelectionResult(entries=entries, k=k, method="length", pool_size=pool_size)


@dataclass(frozen=True)
class OverlapReport:
    jaccard: float
    intersection_size: int
    union_size: int
    size_a: int
    size_b: int
    method_a: str
    method_b: str
    per_test: dict

    def to_dict(self) -> dict:
        return {
            "jaccard": self.jaccard,
            "intersection_size": self.intersection_size,
            "union_size": self.union_size,
            "size_a": self.size_a,
            "size_b": self.size_b,
            "method_a": self.method_a,
            "method_b": self.method_b,
            "per_test": {str(k): v for k, v in sorted(self.per_test.items())},
        }


def selection_overlap(a: SelectionResult, b: SelectionResult) -> OverlapReport:
    """Set overlap between two selections over the same pool. Report only."""
    if a.pool_size != b.pool_size:
        raise InvalidArgumentError(
            f"selections cover different pools: {a.pool_size} vs {b.pool_size}"
        )
    set_a = set(a.pool_indices)
    set_b = set(b.pool_indices)
    union = set_a | set_b
    inter = set_a & set_b
    jaccard = (len(inter) / len(union)) if union else 1.0

    claims_a: dict[int, set] = {}
    claims_b: dict[int, set] = {}
    for entry in a.entries:
        if entry.test_index is not None:
            claims_a.setdefault(entry.test_index, set()).add(entry.pool_index)
    for entry in b.entries:
        if entry.test_index is not None:
            claims_b.setdefault(entry.test_index, set()).add(entry.pool_index)
    per_test = {}
    for j in sorted(set(claims_a) | set(claims_b)):
        ca = claims_a.get(j, set())
        cb = claims_b.get(j, set())
        u = ca | cb
        per_test[j] = (len(ca & cb) / len(u)) if u else 1.0

    return OverlapReport(
        jaccard=jaccard,
        intersection_size=len(inter),
        union_size=len(union),
        size_a=len(set_a),
        size_b=len(set_b),
        method_a=a.method,
        method_b=b.method,
        per_test=per_test,
    )


# ---------------------------------------------------------------------------
# line-delimited persistence
# ---------------------------------------------------------------------------

def write_selection(path, result: SelectionResult):
    """One summary line, then one {rank, pool_index, test_index, score} line
    per selected item."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(
            {
                "type": "summary",
                "method": result.method,
                "k": result.k,
                "pool_size": result.pool_size,
                "seeds": {k: result.seeds[k] for k in sorted(result.seeds)},
            },
            sort_keys=True,
        ) + "\n")
        for e in result.entries:
            f.write(json.dumps(
                {"rank": e.rank, "pool_index": e.pool_index,
                 "test_index": e.test_index, "score": e.score},
                sort_keys=True,
            ) + "\n")


def read_selection(path) -> SelectionResult:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in (l.strip() for l in f) if line]
    if not lines:
        raise InvalidArgumentError(f"{path}: empty selection file")
    summary = json.loads(lines[0])
    if summary.get("type") != "summary":
        raise InvalidArgumentError(f"{path}: first record is not a summary header")
    entries = []
    for line in lines[1:]:
        rec = json.loads(line)
        entries.append(SelectionEntry(rank=rec["rank"], pool_index=rec["pool_index"],
                                      test_index=rec["test_index"], score=rec["score"]))
    return SelectionResult(entries=tuple(entries), k=summary["k"], method=summary["method"],
                           pool_size=summary["pool_size"], seeds=summary.get("seeds", {}))
