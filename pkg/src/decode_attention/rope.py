"""Rotary position encoding over a leading slice of the head dimension.

Pairing convention: channel pairs are interleaved, ``(2i, 2i+1)`` for
``i in [0, d_R/2)``, and pair ``i`` rotates by ``pos * base**(-2i/d_R)``.
Channels ``[d_R, d)`` pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .numerics import FLOAT


@dataclass(frozen=True)
class RopeParams:
    d_R: int
    base: float = 10000.0
    max_pos: int = 1 << 20

    def __post_init__(self):
        if self.d_R < 0 or self.d_R % 2:
            raise ParameterError(f"rotated width must be even and nonnegative, got {self.d_R}")
        if self.base <= 0:
            raise ParameterError("frequency base must be positive")
        if self.max_pos < 1:
            raise ParameterError("max_pos must be positive")

    def frequencies(self) -> np.ndarray:
        i = np.arange(self.d_R // 2, dtype=np.float64)
        return self.base ** (-2.0 * i / self.d_R)


def _angles(positions, p: RopeParams) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(positions, dtype=np.int64)
    if pos.ndim != 1:
        raise ParameterError("positions must be a 1-D integer sequence")
    if pos.size and (pos.min() < 0 or pos.max() >= p.max_pos):
        raise ParameterError(f"positions must lie in [0, {p.max_pos})")
    if pos.size > 1 and not (np.diff(pos) > 0).all():
        raise ParameterError("positions must be strictly increasing")
    theta = pos[:, None].astype(np.float64) * p.frequencies()[None, :]
    return np.cos(theta).astype(FLOAT), np.sin(theta).astype(FLOAT)


def apply_rope(x: np.ndarray, positions, p: RopeParams, *, inverse: bool = False) -> np.ndarray:
    """Rotate the first ``p.d_R`` channels of every head of ``x``.

    ``x`` is ``[B, Lq, h, d]`` and ``positions`` holds one position per
    query row. ``inverse=True`` applies the opposite rotation.
    """
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 4:
        raise DimensionError(f"apply_rope expects [B, Lq, h, d], got {x.shape}")
    if x.shape[-1] < p.d_R:
        raise DimensionError(f"head width {x.shape[-1]} smaller than rotated width {p.d_R}")
    if len(positions) != x.shape[1]:
        raise ParameterError(f"{len(positions)} positions for {x.shape[1]} rows")
    out = x.copy()
    if p.d_R == 0:
        return out
    cos, sin = _angles(positions, p)
    if inverse:
        sin = -sin
    cos = cos[None, :, None, :]
    sin = sin[None, :, None, :]
    even = x[..., 0 : p.d_R : 2]
    odd = x[..., 1 : p.d_R : 2]
    out[..., 0 : p.d_R : 2] = even * cos - odd * sin
    out[..., 1 : p.d_R : 2] = even * sin + odd * cos
    return out


def rotate_vector(v: np.ndarray, pos: int, p: RopeParams) -> np.ndarray:
    """Rotate a single ``d``-vector as if it sat at position ``pos``."""
    v = np.asarray(v, dtype=FLOAT)
    return apply_rope(v.reshape(1, 1, 1, -1), [pos], p).reshape(-1)


def rope_dot_shift_property(q, k, p: RopeParams, delta: int, a: int = 3, b: int = 11, tol: float = 1e-5) -> bool:
    """Check that shifting both positions by ``delta`` keeps the rotated dot product."""
    q = np.asarray(q, dtype=FLOAT)
    k = np.asarray(k, dtype=FLOAT)
    if q.shape != (p.d_R,) or k.shape != (p.d_R,):
        raise DimensionError(f"expected vectors of width {p.d_R}")
    base = float(np.dot(rotate_vector(q, a, p).astype(np.float64), rotate_vector(k, b, p)))
    shifted = float(np.dot(rotate_vector(q, a + delta, p).astype(np.float64), rotate_vector(k, b + delta, p)))
    return abs(shifted - base) <= tol * max(1.0, abs(base))
