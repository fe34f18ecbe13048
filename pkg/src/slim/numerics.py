"""Dense linear algebra primitives used throughout the package.

A "matrix" is a 2-D float64 numpy array, row-major. Everything here is pure:
no function mutates its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankError, ShapeError

Matrix = np.ndarray


def as_matrix(data) -> Matrix:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected 2-D data, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ShapeError("matrix entries must be finite")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check.

    Backed by numpy's GEMM; deterministic for a fixed build. The naive
    triple-loop reference lives in the tests as an independent oracle.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    # Split by sign so exp() never overflows.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: Matrix) -> Matrix:
    """Elementwise x * sigmoid(x)."""
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def softmax(v: Matrix, axis: str = "row") -> Matrix:
    """Max-shifted softmax along rows or columns; each slice sums to 1."""
    v = np.asarray(v, dtype=np.float64)
    ax = {"row": 1, "col": 0}.get(axis)
    if ax is None:
        raise ValueError(f"axis must be 'row' or 'col', got {axis!r}")
    shifted = v - np.max(v, axis=ax, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=ax, keepdims=True)


def truncated_svd(m: Matrix, r: int) -> tuple[Matrix, np.ndarray, Matrix]:
    """Best rank-r factorization: returns (U, S, V) with m ~= U @ diag(S) @ V.T.

    S is nonincreasing and nonnegative; U is rows x r, V is cols x r.
    """
    m = np.asarray(m, dtype=np.float64)
    if not (1 <= r <= min(m.shape)):
        raise RankError(f"rank {r} out of range for shape {m.shape}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return u[:, :r].copy(), s[:r].copy(), vt[:r].T.copy()


def round_half_away(x):
    """Round to nearest integer, halves away from zero (single rounding rule
    used for all quantization in the package)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class QuantizedMatrix:
    """Per-row symmetric 8-bit quantization: row i dequantizes as
    values[i] * scales[i]."""

    values: np.ndarray  # int8, row-major
    scales: np.ndarray  # float64, one per row

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def quantize_i8(m: Matrix) -> QuantizedMatrix:
    """Per-row symmetric quantization; the row max-abs maps to 127.

    All-zero rows get scale 1.0 by convention so dequantization stays a plain
    scalar multiply. Roundtrip error is bounded by scale/2 elementwise.
    """
    m = as_matrix(m)
    maxabs = np.max(np.abs(m), axis=1)
    scales = np.where(maxabs > 0.0, maxabs / 127.0, 1.0)
    q = round_half_away(m / scales[:, None])
    q = np.clip(q, -127, 127).astype(np.int8)
    return QuantizedMatrix(values=q, scales=scales)


def dequantize(q: QuantizedMatrix) -> Matrix:
    return q.values.astype(np.float64) * q.scales[:, None]
