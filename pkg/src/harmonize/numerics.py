"""Deterministic numeric kernels and the seeded PRNG.

Every matrix is a 2-D ``float64`` numpy array. The kernels here fix their
summation order so that results do not depend on the BLAS in use.
"""
from __future__ import annotations

import math

import numpy as np

from .exceptions import DimensionError

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

__all__ = [
    "MASK64",
    "SeededRng",
    "as_matrix",
    "matmul",
    "mix",
    "resample_nearest",
    "softmax_rows",
]

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_NEG_53 = 2.0**-53


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite, C-contiguous 2-D float64 array."""
    m = np.array(x, dtype=np.float64, copy=True, order="C")
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def matmul(a, b):
    """Matrix product with a fixed (row, col, inner) accumulation order.

    Each output entry is ``((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...``,
    i.e. exactly what a plain triple loop computes. Uses a numba kernel
    when available and a numpy loop over the inner index otherwise; both
    give identical bits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shape {a.shape} by shape {b.shape}")
    if _matmul_jit is not None:
        return _matmul_jit(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return _matmul_numpy(a, b)


def _matmul_numpy(a, b):
    # accumulate the transposed product so every update touches a contiguous row
    at = np.ascontiguousarray(a.T)
    bt = np.ascontiguousarray(b.T)
    out_t = np.zeros((b.shape[1], a.shape[0]))
    tmp = np.empty_like(out_t)
    for k in range(a.shape[1]):
        np.multiply(bt[:, k, None], at[k], out=tmp)
        out_t += tmp
    return np.ascontiguousarray(out_t.T)


def _matmul_loops(a, b):
    # i-k-j order: per output entry the inner index is still summed in order,
    # and no fast-math flags are set, so there is no reassociation or FMA
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for k in range(inner):
            aik = a[i, k]
            for j in range(cols):
                out[i, j] += aik * b[k, j]
    return out


_matmul_jit = numba.njit(cache=True)(_matmul_loops) if numba is not None else None


def softmax_rows(m, scale=1.0):
    """Row-wise ``softmax(scale * m)`` with max subtraction."""
    m = np.asarray(m, dtype=np.float64)
    z = scale * m
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def resample_nearest(grid, target_h, target_w):
    """Nearest-neighbour resample of an ``H x W`` grid.

    Source index along each axis is ``floor((i + 0.5) * H / target_H)``.
    """
    grid = np.asarray(grid)
    if grid.ndim != 2 or min(grid.shape) < 1:
        raise DimensionError(f"expected a non-empty 2-D grid, got shape {grid.shape}")
    if target_h < 1 or target_w < 1:
        raise DimensionError(f"target size must be positive, got {target_h}x{target_w}")
    h, w = grid.shape
    rows = [math.floor((i + 0.5) * h / target_h) for i in range(target_h)]
    cols = [math.floor((j + 0.5) * w / target_w) for j in range(target_w)]
    return grid[np.ix_(rows, cols)].copy()


def _splitmix_finalize(z):
    z ^= z >> 30
    z = (z * _M1) & MASK64
    z ^= z >> 27
    z = (z * _M2) & MASK64
    z ^= z >> 31
    return z


def _box_muller(x1, x2):
    u1 = ((x1 >> 11) + 1) * _TWO_NEG_53
    u2 = ((x2 >> 11) + 1) * _TWO_NEG_53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


class SeededRng:
    """SplitMix64 generator with Box-Muller Gaussians.

    Not thread safe; give each concurrent consumer its own instance.
    """

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + _GOLDEN) & MASK64
        return _splitmix_finalize(self.state)

    def uniform(self):
        """Uniform draw in ``(0, 1]``."""
        return ((self.next_u64() >> 11) + 1) * _TWO_NEG_53

    def gaussian(self):
        x1 = self.next_u64()
        x2 = self.next_u64()
        return _box_muller(x1, x2)

    def u64_array(self, n):
        """The next ``n`` outputs as a ``uint64`` array (same stream as ``next_u64``)."""
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
            z ^= z >> np.uint64(30)
            z *= np.uint64(_M1)
            z ^= z >> np.uint64(27)
            z *= np.uint64(_M2)
            z ^= z >> np.uint64(31)
        self.state = (self.state + n * _GOLDEN) & MASK64
        return z

    def gaussians(self, n):
        """The next ``n`` Gaussians as a float64 array, identical to ``n`` calls of ``gaussian``."""
        raw = self.u64_array(2 * n).tolist()
        return np.array([_box_muller(raw[2 * i], raw[2 * i + 1]) for i in range(n)])

    def normal_matrix(self, rows, cols, scale=1.0):
        return self.gaussians(rows * cols).reshape(rows, cols) * scale


def mix(seed, key):
    """Derive an independent 64-bit seed from ``(seed, key)``."""
    inner = SeededRng(key).next_u64()
    return SeededRng((int(seed) ^ inner) & MASK64).next_u64()
