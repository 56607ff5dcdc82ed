"""Compressed representations: per-layer random projection, pooling, signs.

The projection-concatenation method maps each of the H hidden layers through
its own v x w random matrix and concatenates the results in layer order,
giving an H*w-dimensional feature whose pairwise cosines track the originals
(Johnson-Lindenstrauss regime). With w defaulting to floor(v / H) the output
dimensionality approximately matches v; exact equality is impossible when H
does not divide v (e.g. v=4096, H=18 gives 18*227 = 4086).

Projection entries default to uniform on [-1, 1]; a sign (+/-1) mode is also
provided. Matrices are regenerated from the seed on demand rather than
persisted: a v x w float matrix per layer is cheap to rebuild and recording
only the seed removes a consistency hazard between runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError
from .kernels import matmul_nt
from .provider import LayerStack

_BANK_TAG = 0x42414E4B
_MASK64 = 0xFFFFFFFFFFFFFFFF

ENTRY_MODES = ("uniform", "sign")


@dataclass(eq=False)
class ProjectionBank:
    """H per-layer projection matrices plus the seed that generated them."""

    seed: int
    v: int
    w: int
    num_layers: int
    entry_mode: str
    matrices: tuple[np.ndarray, ...]  # each (v, w) float32

    @property
    def output_dim(self) -> int:
        return self.num_layers * self.w

    @cached_property
    def _matrices_t(self) -> tuple[np.ndarray, ...]:
        # (w, v) row-major copies for the deterministic kernel
        return tuple(np.ascontiguousarray(m.T) for m in self.matrices)


def default_projection_dim(v: int, num_layers: int) -> int:
    """Per-layer output dimension keeping H*w as close to v as possible."""
    if num_layers < 1:
        raise InvalidArgumentError("num_layers must be >= 1")
    w = v // num_layers
    if w < 1:
        raise InvalidArgumentError(f"v={v} too small for {num_layers} layers")
    return w


def make_projection_bank(seed: int, v: int, w: int, num_layers: int,
                         entry_mode: str = "uniform") -> ProjectionBank:
    """Build H projection matrices deterministically from (seed, layer)."""
    if num_layers < 1:
        raise InvalidArgumentError(f"num_layers must be >= 1, got {num_layers}")
    if not (1 <= w <= v):
        raise InvalidArgumentError(f"need 1 <= w <= v, got w={w}, v={v}")
    if entry_mode not in ENTRY_MODES:
        raise InvalidArgumentError(f"unknown entry_mode {entry_mode!r}")
    matrices = []
    for h in range(num_layers):
        rng = np.random.default_rng(np.random.SeedSequence([_BANK_TAG, seed & _MASK64, h]))
        if entry_mode == "uniform":
            mat = rng.uniform(-1.0, 1.0, size=(v, w)).astype(np.float32)
        else:
            mat = (rng.integers(0, 2, size=(v, w), dtype=np.int8) * 2 - 1).astype(np.float32)
        matrices.append(np.ascontiguousarray(mat))
    return ProjectionBank(seed=seed, v=v, w=w, num_layers=num_layers,
                          entry_mode=entry_mode, matrices=tuple(matrices))


def project(e, p) -> np.ndarray:
    """Row-vector projection ``e @ p`` (also accepts a block of rows)."""
    p = np.asarray(p)
    if p.ndim != 2:
        raise InvalidArgumentError(f"projection matrix must be 2-D, got shape {p.shape}")
    arr = np.asarray(e)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != p.shape[0]:
        raise InvalidArgumentError(
            f"cannot project shape {np.asarray(e).shape} through {p.shape}"
        )
    out = matmul_nt(arr, np.ascontiguousarray(p.T, dtype=np.float32))
    return out[0] if single else out


def compose_rows(rows: np.ndarray, bank: ProjectionBank) -> np.ndarray:
    """Project-and-concatenate a block of stored rows (m, H*v) -> (m, H*w)."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != bank.num_layers * bank.v:
        raise InvalidArgumentError(
            f"rows of width {rows.shape[-1]} do not hold {bank.num_layers} layers "
            f"of dimension {bank.v}"
        )
    m = rows.shape[0]
    out = np.empty((m, bank.output_dim), dtype=np.float32)
    for h in range(bank.num_layers):
        layer = np.ascontiguousarray(rows[:, h * bank.v:(h + 1) * bank.v], dtype=np.float32)
        out[:, h * bank.w:(h + 1) * bank.w] = matmul_nt(layer, bank._matrices_t[h])
    return out


def crds_r_compose(stack: LayerStack, bank: ProjectionBank) -> np.ndarray:
    """Per-layer projection of a stack, concatenated in layer order."""
    if stack.num_layers != bank.num_layers or stack.v != bank.v:
        raise InvalidArgumentError(
            f"stack geometry ({stack.num_layers} x {stack.v}) does not match "
            f"bank ({bank.num_layers} x {bank.v})"
        )
    return compose_rows(stack.layers.reshape(1, -1), bank)[0]


def average_pool(stack: LayerStack) -> np.ndarray:
    """Element-wise mean over the stack's layers (the comparison method)."""
    if stack.num_layers < 1:
        raise InvalidArgumentError("cannot pool an empty stack")
    return stack.layers.mean(axis=0)


def binarize(e) -> np.ndarray:
    """Keep only component signs: >= 0 maps to +1, < 0 maps to -1."""
    arr = np.asarray(e)
    return np.where(arr >= 0, np.float32(1.0), np.float32(-1.0))
