"""Deterministic float32 numeric kernels.

Every matrix product in the engine (similarity blocks, random projection,
whitening application) runs through :func:`matmul_nt`, a scalar numba kernel
that accumulates over the inner dimension in fixed index order with a single
float32 accumulator. fastmath stays off, so LLVM may neither reassociate the
reduction nor contract multiply-add into FMA; the result for each output
element is therefore bitwise identical to a naive triple loop and independent
of row blocking, worker count, and scheduling.

numpy's BLAS-backed ``@`` does not make that promise (GEMV and GEMM kernels
accumulate differently depending on operand shapes), which is why it is not
used anywhere on the score path.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types

from .errors import InvalidArgumentError, NumericError

# readonly signatures: memory-mapped shard blocks arrive write-protected
_F32_2D_RO = types.Array(types.float32, 2, "C", readonly=True)
_F32_2D = types.Array(types.float32, 2, "C")
_F64_1D = types.Array(types.float64, 1, "C")


@njit(_F32_2D(_F32_2D_RO, _F32_2D_RO), cache=True, nogil=True)
def _matmul_nt_f32(a, b):  # pragma: no cover - exercised via matmul_nt
    m, d = a.shape
    k = b.shape[0]
    out = np.empty((m, k), dtype=np.float32)
    for i in range(m):
        for j in range(k):
            acc = np.float32(0.0)
            for l in range(d):
                acc += a[i, l] * b[j, l]
            out[i, j] = acc
    return out


@njit(_F64_1D(_F32_2D_RO), cache=True, nogil=True)
def _row_sumsq_f64(a):  # pragma: no cover - exercised via normalize_rows
    m, d = a.shape
    out = np.empty(m, dtype=np.float64)
    for i in range(m):
        acc = 0.0
        for l in range(d):
            x = np.float64(a[i, l])
            acc += x * x
        out[i] = acc
    return out


def _as_f32_c(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr, dtype=np.float32)


def matmul_nt(a, b) -> np.ndarray:
    """Compute ``a @ b.T`` for (m, d) x (k, d) float32 inputs, bitwise stably.

    Output element (i, j) is the fixed-order float32 dot product of row i of
    ``a`` with row j of ``b``; it does not depend on m, k, or how the rows
    were batched.
    """
    a = _as_f32_c(a, "a")
    b = _as_f32_c(b, "b")
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(
            f"inner dimensions disagree: {a.shape[1]} vs {b.shape[1]}"
        )
    return _matmul_nt_f32(a, b)


def normalize_rows(a, check_finite: bool = True) -> np.ndarray:
    """L2-normalize each row of a float32 matrix.

    Zero rows stay zero. Row norms are accumulated in float64 in fixed index
    order, so the result for a given row never depends on the other rows in
    the block.
    """
    a = _as_f32_c(a, "a")
    if check_finite and not np.isfinite(a).all():
        raise NumericError("non-finite values in input vectors")
    norms = np.sqrt(_row_sumsq_f64(a))
    norms[norms == 0.0] = 1.0
    return (a / norms[:, None]).astype(np.float32)
