"""Deterministic float32 array kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype ``float32`` in C order.
Every reduction here runs in a fixed order so that two calls with equal
inputs give bit-identical outputs on any platform; nothing dispatches to
BLAS, whose summation order is implementation defined.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

FLOAT = np.float32


def as_tensor(x, *, check_finite: bool = True) -> np.ndarray:
    """Coerce ``x`` to a contiguous float32 array and validate it."""
    if np.ndim(x) == 0:
        raise DimensionError("tensors need at least one axis")
    t = np.ascontiguousarray(x, dtype=FLOAT)
    if check_finite and not np.isfinite(t).all():
        raise DimensionError("tensor contains NaN or Inf")
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` accumulated left to right in float32.

    Leading (batch) axes broadcast as in ``numpy.matmul``. Each output
    element is ``((a0*b0 + a1*b1) + a2*b2) + ...`` with one float32 rounding
    per multiply and per add, i.e. exactly what a scalar triple loop gives.
    """
    a = np.asarray(a, dtype=FLOAT)
    b = np.asarray(b, dtype=FLOAT)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    k = a.shape[-1]
    if b.shape[-2] != k:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if k == 0:
        lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        return np.zeros(lead + (a.shape[-2], b.shape[-1]), dtype=FLOAT)
    out = a[..., :, 0:1] * b[..., 0:1, :]
    for p in range(1, k):
        out = out + a[..., :, p : p + 1] * b[..., p : p + 1, :]
    return np.ascontiguousarray(out, dtype=FLOAT)


def softmax_rows(x: np.ndarray, scale: float = 1.0, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax of ``scale * x`` over the last axis.

    ``mask`` (broadcastable to ``x``, True = keep) zeroes excluded entries.
    Every row must keep at least one entry.
    """
    x = np.asarray(x, dtype=FLOAT)
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x * FLOAT(scale)
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        if not mask.any(axis=-1).all():
            raise DimensionError("softmax row with every entry masked")
        z = np.where(mask, z, FLOAT(-np.inf))
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, FLOAT(0.0))
    return (e / e.sum(axis=-1, keepdims=True)).astype(FLOAT)


def concat_last(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=FLOAT)
    b = np.asarray(b, dtype=FLOAT)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last leading extents differ: {a.shape} vs {b.shape}")
    if b.shape[-1] == 0:
        return a.copy()
    return np.concatenate([a, b], axis=-1)


def split_last(x: np.ndarray, at: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`concat_last` for a leading slice of width ``at``."""
    if not 0 <= at <= x.shape[-1]:
        raise DimensionError(f"split point {at} outside last extent {x.shape[-1]}")
    return x[..., :at].copy(), x[..., at:].copy()


def broadcast_head(x: np.ndarray, h: int) -> np.ndarray:
    """Repeat a single-head tensor ``[B, L, 1, d]`` to ``[B, L, h, d]``."""
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 4 or x.shape[2] != 1:
        raise DimensionError(f"broadcast_head expects [B, L, 1, d], got {x.shape}")
    if h < 1:
        raise DimensionError(f"head count must be positive, got {h}")
    return np.ascontiguousarray(np.broadcast_to(x, (x.shape[0], x.shape[1], h, x.shape[3])))


class SeededRng:
    """Reproducible sampler backed by numpy's Philox-4x64 counter-based generator.

    Philox output depends only on (key, counter), so a given seed yields the
    same stream on every platform and numpy release that ships Philox.
    """

    def __init__(self, seed: int):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(FLOAT)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return (self._gen.standard_normal(size=shape) * std).astype(FLOAT)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "SeededRng":
        """Independent child stream; the same (seed, key) always gives the same child."""
        return SeededRng((self.seed * 0x9E3779B97F4A7C15 + key + 1) % 2**64)
