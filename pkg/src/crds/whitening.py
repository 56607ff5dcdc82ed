"""Whitening transform: fit, apply, and the distributed fit-sample draw.

Fitting follows the classical recipe on a sample of N raw embeddings:

    mean      ebar = (1/N) * sum(e_a)
    covariance   C = (1/N) * sum((e_a - ebar)^T (e_a - ebar))
    eigendecomp  C = U diag(lam) U^T,  lam descending
    transform    W = U diag(lam)^(-1/2), truncated to its first beta columns

so that centered embeddings mapped through W_beta have identity covariance in
the retained top-beta eigenspace. Covariance uses the 1/N normalization (not
1/(N-1)); the difference is a global scale that cosine similarity ignores.

Numerical notes:
  - The fit runs in float64 and the returned transformer keeps float64
    arrays. Application quantizes to float32 first (the on-disk format is
    float32), so applying a round-tripped transformer is bitwise identical
    to applying a freshly fitted one.
  - Eigenvalues below ``eigen_floor`` (relative to the largest) are clamped
    before the inverse square root; near-zero eigenvalues occur whenever the
    sample is rank-deficient and would otherwise produce infinities.
  - Eigenvector column signs are canonicalized (largest-magnitude entry made
    positive) so repeated fits of the same sample are reproducible; cosine
    scores are invariant to the choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .kernels import matmul_nt

_FIT_DRAW_TAG = 0x46495453  # distinguishes fit-sample streams from other seed uses


@dataclass(eq=False)
class WhiteningTransformer:
    """Mean vector and truncated whitening matrix fit on a sample.

    ``mean`` has shape (v,) and ``matrix`` shape (v, beta). ``eigenvalues``
    holds the retained top-beta covariance eigenvalues (descending, >= 0)
    when the transformer came from a fit; transformers loaded from disk
    carry None there because the file format stores only mean and matrix.
    """

    v: int
    beta: int
    mean: np.ndarray
    matrix: np.ndarray
    fit_count: int
    eigenvalues: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not (1 <= self.beta <= self.v):
            raise InvalidArgumentError(
                f"beta must satisfy 1 <= beta <= v, got beta={self.beta}, v={self.v}"
            )
        if self.mean.shape != (self.v,):
            raise InvalidArgumentError("mean shape disagrees with v")
        if self.matrix.shape != (self.v, self.beta):
            raise InvalidArgumentError("matrix shape disagrees with (v, beta)")
        if self.eigenvalues is not None:
            ev = np.asarray(self.eigenvalues, dtype=np.float64)
            if ev.shape != (self.beta,) or (ev < 0).any() or (np.diff(ev) > 0).any():
                raise InvalidArgumentError(
                    "eigenvalues must be beta non-negative values, descending"
                )

    @cached_property
    def _mean32(self) -> np.ndarray:
        return np.ascontiguousarray(self.mean, dtype=np.float32)

    @cached_property
    def _matrix32_t(self) -> np.ndarray:
        # (beta, v), row-major, as the deterministic kernel wants it
        return np.ascontiguousarray(self.matrix.T, dtype=np.float32)


def whitening_fit(samples, beta: int, eigen_floor: float = 1e-10) -> WhiteningTransformer:
    """Fit a whitening transformer on N sample rows, truncated to beta dims."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"samples must be 2-D, got shape {x.shape}")
    n, v = x.shape
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 samples to fit, got {n}")
    if not (1 <= beta <= v):
        raise InvalidArgumentError(f"beta must satisfy 1 <= beta <= {v}, got {beta}")
    if eigen_floor <= 0:
        raise InvalidArgumentError("eigen_floor must be positive")
    if not np.isfinite(x).all():
        raise NumericError("non-finite values in fit samples")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = (centered.T @ centered) / n

    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]

    # canonical column signs: largest-magnitude entry positive
    anchor = np.argmax(np.abs(eigvecs), axis=0)
    signs = np.sign(eigvecs[anchor, np.arange(v)])
    signs[signs == 0] = 1.0
    eigvecs = eigvecs * signs

    floor_value = eigen_floor * eigvals[0] if eigvals[0] > 0 else eigen_floor
    clamped = np.maximum(eigvals, floor_value)
    w_full = eigvecs / np.sqrt(clamped)

    return WhiteningTransformer(
        v=v,
        beta=beta,
        mean=mean,
        matrix=np.ascontiguousarray(w_full[:, :beta]),
        fit_count=n,
        eigenvalues=eigvals[:beta].copy(),
    )


def whitening_apply(e, transformer: WhiteningTransformer) -> np.ndarray:
    """Map embeddings to the whitened space: ``(e - mean) @ W_beta``.

    Accepts one row vector (shape (v,)) or a block of rows (shape (m, v));
    the transformer is quantized to float32 and products run through the
    deterministic kernel, so per-row results never depend on blocking.
    """
    arr = np.asarray(e)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != transformer.v:
        raise InvalidArgumentError(
            f"expected vectors of dimension {transformer.v}, got shape {np.asarray(e).shape}"
        )
    centered = np.ascontiguousarray(arr, dtype=np.float32) - transformer._mean32
    out = matmul_nt(centered, transformer._matrix32_t)
    return out[0] if single else out


def worker_fit_quota(fit_size: int, n_workers: int) -> int:
    """Rows each worker contributes to the fit sample: floor(F / n).

    When F is not divisible by n the deficit stays unfilled so worker quotas
    remain symmetric; the realized sample size is quota * n.
    """
    if n_workers < 1:
        raise InvalidArgumentError("n_workers must be >= 1")
    if fit_size < 0:
        raise InvalidArgumentError("fit_size must be >= 0")
    return fit_size // n_workers


def fit_sample_draw(shards, fit_size: int, seed: int, n_workers: int | None = None) -> np.ndarray:
    """Draw the whitening fit sample from a shard set.

    Each worker (one per shard) samples ``floor(fit_size / n)`` of its rows
    without replacement under a worker-local seed derived from ``(seed,
    shard_index)``; the coordinator concatenates contributions in worker
    order. Deterministic in (seed, n); independent of execution concurrency.
    """
    n = shards.num_shards if n_workers is None else n_workers
    if n != shards.num_shards:
        raise InvalidArgumentError(
            f"n_workers={n} disagrees with the shard layout ({shards.num_shards} shards)"
        )
    if fit_size > shards.total_count:
        raise InvalidArgumentError(
            f"fit_size {fit_size} exceeds pool size {shards.total_count}"
        )
    quota = worker_fit_quota(fit_size, n)
    parts = []
    for i in range(n):
        _, matrix = shards.open(i)
        real = shards.counts[i]
        rng = np.random.default_rng(
            np.random.SeedSequence([_FIT_DRAW_TAG, seed & 0xFFFFFFFFFFFFFFFF, i])
        )
        picked = rng.choice(real, size=quota, replace=False)
        picked.sort()
        parts.append(np.asarray(matrix[picked], dtype=np.float32))
    return np.concatenate(parts, axis=0) if parts else np.empty((0, shards.dim), np.float32)
