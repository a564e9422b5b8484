"""Masked image-alignment scores and the ablation report.

Reference masks come from the run configuration rather than from an
external segmenter.
"""
from __future__ import annotations

import abc
import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .denoiser import decode_latent
from .exceptions import DimensionError, EmptyMaskWarning, ReportError
from .sampler import VARIANTS

__all__ = [
    "REPORT_COLUMNS",
    "AblationReport",
    "FeatureExtractor",
    "HistogramExtractor",
    "MaskedPair",
    "ablation_report",
    "latent_to_image",
    "masked_similarity",
    "unit_range",
]

REPORT_COLUMNS = ("variant", "masked_sim", "unmasked_sim", "mask_coverage")


class FeatureExtractor(abc.ABC):
    """Maps an image (optionally restricted to a mask) to a feature vector."""

    @abc.abstractmethod
    def extract(self, image, mask=None):
        ...

    def __call__(self, image, mask=None):
        return self.extract(image, mask)


class HistogramExtractor(FeatureExtractor):
    """L2-normalized intensity histogram over ``[0, 1]``; empty masks give a zero vector."""

    def __init__(self, bins=64):
        self.bins = bins

    def extract(self, image, mask=None):
        image = np.asarray(image, dtype=np.float64)
        values = image[np.asarray(mask, dtype=bool)] if mask is not None else image.ravel()
        idx = np.minimum((np.clip(values, 0.0, 1.0) * self.bins).astype(np.int64), self.bins - 1)
        hist = np.bincount(idx, minlength=self.bins).astype(np.float64)
        norm = math.sqrt(math.fsum((hist * hist).tolist()))
        return hist / norm if norm > 0 else hist


@dataclass(frozen=True)
class MaskedPair:
    reference: np.ndarray
    reference_mask: np.ndarray
    generated: np.ndarray
    generated_mask: np.ndarray

    def __post_init__(self):
        for name in ("reference", "generated"):
            img = np.asarray(getattr(self, name))
            mask = np.asarray(getattr(self, f"{name}_mask"))
            if img.shape != mask.shape:
                raise DimensionError(f"{name} image {img.shape} and mask {mask.shape} differ")
            if not np.isin(mask, (0, 1)).all():
                raise DimensionError(f"{name} mask must be binary")


def _cosine(a, b):
    dot = math.fsum((a * b).tolist())
    aa = math.fsum((a * a).tolist())
    bb = math.fsum((b * b).tolist())
    if aa == 0.0 or bb == 0.0:
        return None
    # sqrt(x*x) == x exactly, so identical inputs give exactly 1
    return max(-1.0, min(1.0, dot / math.sqrt(aa * bb)))


def masked_similarity(pair, extractor=None):
    """Cosine similarity of features from the masked regions of both images."""
    extractor = extractor or HistogramExtractor()
    feats = []
    for img, mask in ((pair.reference, pair.reference_mask), (pair.generated, pair.generated_mask)):
        mask = np.asarray(mask, dtype=bool)
        feats.append(extractor(np.where(mask, np.asarray(img, dtype=np.float64), 0.0), mask))
    sim = _cosine(*feats)
    if sim is None:
        warnings.warn("a masked region is empty; similarity set to 0", EmptyMaskWarning,
                      stacklevel=2)
        return 0.0
    return sim


def unit_range(image):
    """Min-max normalize to ``[0, 1]``; returns ``(normalized, min, max)``."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi == lo:
        return np.zeros_like(image), lo, hi
    return (image - lo) / (hi - lo), lo, hi


def latent_to_image(z):
    """Decode a latent and average its channels into an ``H x W`` grayscale image."""
    return decode_latent(z).mean(axis=2)


@dataclass
class AblationReport:
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([row["variant"]] + [repr(float(row[c])) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()


def ablation_report(results, reference, reference_mask=None, extractor=None, require_all=True):
    """Score each variant's final image against the reference.

    ``masked_sim`` uses the reference mask and the variant's final subject
    mask; ``unmasked_sim`` uses whole images.
    """
    by_key = {r.key: r for r in results}
    missing = [k for k, _ in VARIANTS if k not in by_key]
    if require_all and missing:
        raise ReportError(f"missing ablation variants: {', '.join(missing)}")
    ref_img = unit_range(reference)[0]
    ref_mask = np.ones(ref_img.shape, dtype=np.uint8) if reference_mask is None else reference_mask
    full_ref = np.ones(ref_img.shape, dtype=np.uint8)

    rows = []
    for key, label in VARIANTS:
        if key not in by_key:
            continue
        res = by_key[key]
        gen = unit_range(latent_to_image(res.z0))[0]
        gen_mask = res.final_mask.as_grid()
        if gen_mask.shape != gen.shape:
            raise DimensionError(f"mask grid {gen_mask.shape} does not match image {gen.shape}")
        rows.append({
            "variant": label,
            "masked_sim": masked_similarity(MaskedPair(ref_img, ref_mask, gen, gen_mask), extractor),
            "unmasked_sim": masked_similarity(
                MaskedPair(ref_img, full_ref, gen, np.ones(gen.shape, dtype=np.uint8)), extractor
            ),
            "mask_coverage": res.final_mask.coverage,
        })
    return AblationReport(rows)
