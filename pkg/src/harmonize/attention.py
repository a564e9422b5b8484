"""Single-head scaled dot-product attention and the self-attention swap.

``masked_attn_swap`` selects whole query rows: a latent pixel inside the
subject mask takes its output from the swapped keys/values, every other
pixel keeps its ordinary self-attention output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DimensionError, DualShapeError, EmptyContextError, MaskError
from .numerics import SeededRng, matmul, softmax_rows

__all__ = [
    "AttentionRecord",
    "AttentionWeights",
    "SwapBuffer",
    "attention",
    "attn_swap",
    "check_binary_mask",
    "cross_attention",
    "masked_attn_swap",
    "self_attention",
]


@dataclass(frozen=True)
class AttentionWeights:
    w_q: np.ndarray = field(repr=False)
    w_k: np.ndarray = field(repr=False)
    w_v: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = self.w_q.shape[1]
        if self.w_k.shape[1] != d or self.w_v.shape[1] != d:
            raise DimensionError("W_Q, W_K and W_V must share the projection dimension")
        if self.w_k.shape[0] != self.w_v.shape[0]:
            raise DimensionError("W_K and W_V must share the source dimension")
        for w in (self.w_q, self.w_k, self.w_v):
            if not np.isfinite(w).all():
                raise ValueError("attention weights must be finite")

    @property
    def d(self):
        return self.w_q.shape[1]

    @classmethod
    def random(cls, rng, query_dim, source_dim, d):
        """Seeded weights scaled by ``1/sqrt(fan_in)``."""
        return cls(
            rng.normal_matrix(query_dim, d, 1.0 / math.sqrt(query_dim)),
            rng.normal_matrix(source_dim, d, 1.0 / math.sqrt(source_dim)),
            rng.normal_matrix(source_dim, d, 1.0 / math.sqrt(source_dim)),
        )

    @classmethod
    def zeros_like(cls, other):
        return cls(np.zeros_like(other.w_q), np.zeros_like(other.w_k), np.zeros_like(other.w_v))


@dataclass
class AttentionRecord:
    """One attention map observed during a forward pass.

    ``row_sum_error`` is ``max |sum(row) - 1|`` of the map, computed when the
    record is made so it survives even if ``map`` is not retained.
    """

    layer: int
    step: Optional[int]
    kind: str
    grid: tuple
    row_sum_error: float
    map: Optional[np.ndarray] = field(default=None, repr=False)
    keys: Optional[np.ndarray] = field(default=None, repr=False)
    values: Optional[np.ndarray] = field(default=None, repr=False)
    swapped: bool = False


@dataclass(frozen=True)
class SwapBuffer:
    """Donor keys/values captured at one step, with per-layer subject masks."""

    step: int
    keys: dict = field(repr=False)
    values: dict = field(repr=False)
    masks: dict = field(default_factory=dict, repr=False)

    @property
    def layers(self):
        return tuple(sorted(self.keys))


def check_binary_mask(m, length=None):
    m = np.asarray(m)
    if m.ndim != 1:
        raise MaskError(f"mask must be 1-D, got shape {m.shape}")
    if length is not None and m.shape[0] != length:
        raise MaskError(f"mask length {m.shape[0]} does not match {length} latent pixels")
    if not np.isin(m, (0, 1)).all():
        raise MaskError("mask entries must be 0 or 1")
    return m.astype(bool)


def _row_sum_error(a):
    return float(np.abs(a.sum(axis=1) - 1.0).max()) if a.size else 0.0


def attention(q, k, v):
    """``softmax(Q K^T / sqrt(d)) V``; returns ``(output, map)``."""
    d = q.shape[1]
    if k.shape[1] != d or v.shape[0] != k.shape[0]:
        raise DimensionError(f"incompatible Q {q.shape}, K {k.shape}, V {v.shape}")
    weights = softmax_rows(matmul(q, k.T), 1.0 / math.sqrt(d))
    return matmul(weights, v), weights


def cross_attention(f, c, w, *, layer=0, step=None, grid=None, keep_map=True):
    """Attention of latent features ``f`` (l x h) over context rows ``c`` (l_c x h_c)."""
    rows = getattr(c, "rows", c)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] == 0:
        raise EmptyContextError("cross-attention needs at least one context token")
    if f.shape[1] != w.w_q.shape[0] or rows.shape[1] != w.w_k.shape[0]:
        raise DimensionError(
            f"features {f.shape} / context {rows.shape} do not match weights "
            f"{w.w_q.shape} / {w.w_k.shape}"
        )
    q = matmul(f, w.w_q)
    out, weights = attention(q, matmul(rows, w.w_k), matmul(rows, w.w_v))
    record = AttentionRecord(
        layer, step, "cross", grid or (f.shape[0], 1), _row_sum_error(weights),
        map=weights if keep_map else None,
    )
    return out, record


def self_attention(f, w, *, layer=0, step=None, grid=None, keep_map=True, keep_kv=False):
    """Self-attention over ``f``; returns ``(output, record, (Q, K, V))``."""
    if f.shape[1] != w.w_q.shape[0] or f.shape[1] != w.w_k.shape[0]:
        raise DimensionError(f"features {f.shape} do not match weights {w.w_q.shape}")
    q, k, v = matmul(f, w.w_q), matmul(f, w.w_k), matmul(f, w.w_v)
    out, weights = attention(q, k, v)
    record = AttentionRecord(
        layer, step, "self", grid or (f.shape[0], 1), _row_sum_error(weights),
        map=weights if keep_map else None,
        keys=k if keep_kv else None,
        values=v if keep_kv else None,
    )
    return out, record, (q, k, v)


def attn_swap(q, k_donor, v_donor):
    """Queries of the main pass attend over the donor pass's keys and values."""
    if k_donor.shape[0] != q.shape[0] or v_donor.shape[0] != q.shape[0]:
        raise DualShapeError(
            f"main pass has {q.shape[0]} latent pixels, donor has {k_donor.shape[0]}"
        )
    if k_donor.shape[1] != q.shape[1]:
        raise DualShapeError(f"query dim {q.shape[1]} != donor key dim {k_donor.shape[1]}")
    return attention(q, k_donor, v_donor)[0]


def masked_attn_swap(q, k, v, k_donor, v_donor, m):
    """Row-wise blend: swapped output where ``m == 1``, plain self-attention elsewhere."""
    return _masked_swap(q, k, v, k_donor, v_donor, m)[0]


def _masked_swap(q, k, v, k_donor, v_donor, m):
    m = check_binary_mask(m, q.shape[0])
    if k_donor.shape != k.shape or v_donor.shape != v.shape:
        raise DualShapeError(
            f"donor K/V {k_donor.shape}/{v_donor.shape} do not match main {k.shape}/{v.shape}"
        )
    standard, weights = attention(q, k, v)
    if not m.any():
        return standard, weights
    swapped = attn_swap(q, k_donor, v_donor)
    return np.where(m[:, None], swapped, standard), weights


def random_weights(seed, query_dim, source_dim, d):
    return AttentionWeights.random(SeededRng(seed), query_dim, source_dim, d)
