"""Subject masks from the main pass's cross-attention maps."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DimensionError, EmptyMaskWarning, MissingRecordError, ParameterError
from .numerics import resample_nearest

__all__ = ["SubjectMask", "aggregate_subject_saliency", "binarize", "subject_mask_from_records"]


@dataclass(frozen=True)
class SubjectMask:
    """Binary mask over an ``H_ref x W_ref`` latent grid, stored row-major."""

    values: np.ndarray = field(repr=False)
    grid: tuple
    step: Optional[int] = None

    @property
    def coverage(self):
        return float(self.values.sum()) / self.values.size

    def as_grid(self):
        return self.values.reshape(self.grid)

    def resample(self, height, width):
        """Flat mask at another layer resolution (nearest neighbour)."""
        return resample_nearest(self.as_grid(), height, width).ravel()


def aggregate_subject_saliency(records, subject_slots, height, width):
    """Average the subject columns of every cross-attention map and min-max normalize.

    Each map's subject columns are averaged, reshaped to that layer's grid,
    resampled to ``height x width`` and averaged across layers. A constant
    result normalizes to all zeros.
    """
    subject_slots = list(subject_slots)
    if not subject_slots:
        raise ParameterError("no subject slots given")
    cross = [r for r in records if r.kind == "cross"]
    if not cross:
        raise MissingRecordError("no cross-attention records to build a subject mask from")

    total = np.zeros((height, width))
    for rec in cross:
        if rec.map is None:
            raise MissingRecordError(f"cross-attention map of layer {rec.layer} was not retained")
        if max(subject_slots) >= rec.map.shape[1]:
            raise DimensionError(
                f"subject slot {max(subject_slots)} outside context of length {rec.map.shape[1]}"
            )
        column = rec.map[:, subject_slots].mean(axis=1)
        total += resample_nearest(column.reshape(rec.grid), height, width)
    mean = total / len(cross)

    lo, hi = mean.min(), mean.max()
    if hi == lo:
        return np.zeros_like(mean)
    return (mean - lo) / (hi - lo)


def binarize(saliency, threshold=0.5, step=None):
    """``m_i = 1`` iff ``saliency_i >= threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.size and (saliency.min() < 0.0 or saliency.max() > 1.0):
        raise ParameterError("saliency must lie in [0, 1]")
    grid = saliency.shape if saliency.ndim == 2 else (saliency.size, 1)
    values = (saliency.ravel() >= threshold).astype(np.uint8)
    values.setflags(write=False)
    mask = SubjectMask(values, tuple(grid), step)
    if not values.any():
        warnings.warn(
            f"subject mask at step {step} is empty; swap falls back to plain self-attention",
            EmptyMaskWarning,
            stacklevel=2,
        )
    return mask


def subject_mask_from_records(records, subject_slots, height, width, threshold=0.5, step=None):
    saliency = aggregate_subject_saliency(records, subject_slots, height, width)
    return binarize(saliency, threshold, step)
