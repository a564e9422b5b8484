import csv
import io
import math

import numpy as np
import pytest

from harmonize.denoiser import LatentState
from harmonize.exceptions import DimensionError, EmptyMaskWarning, ReportError
from harmonize.masking import SubjectMask
from harmonize.metrics import (
    REPORT_COLUMNS,
    HistogramExtractor,
    MaskedPair,
    ablation_report,
    latent_to_image,
    masked_similarity,
    unit_range,
)
from harmonize.sampler import VARIANTS, SingleResult, VariantResult


def fake_results(rng, grid=(4, 4), same=False):
    z = rng.standard_normal((16, 3))
    out = []
    for key, label in VARIANTS:
        feats = z if same else rng.standard_normal((16, 3))
        mask = SubjectMask(rng.integers(0, 2, 16).astype(np.uint8), grid)
        if same:
            mask = SubjectMask(np.array([1, 0] * 8, dtype=np.uint8), grid)
        out.append(VariantResult(key, label, SingleResult(LatentState(grid, feats), []), mask))
    return out


class TestHistogram:
    def test_unit_norm_and_length(self, rng):
        f = HistogramExtractor()(rng.uniform(size=(5, 5)))
        assert f.shape == (64,) and math.isclose(np.linalg.norm(f), 1.0, rel_tol=1e-15)

    def test_empty_mask_gives_zero_vector(self):
        assert not HistogramExtractor()(np.ones((2, 2)), np.zeros((2, 2))).any()

    def test_top_edge_in_last_bin(self):
        f = HistogramExtractor(bins=4)(np.array([[1.0]]))
        assert f.tolist() == [0, 0, 0, 1]


class TestMaskedSimilarity:
    def test_self_similarity_exactly_one(self, rng):
        img = rng.uniform(size=(6, 6))
        m = rng.integers(0, 2, (6, 6))
        m[0, 0] = 1
        assert masked_similarity(MaskedPair(img, m, img, m)) == 1.0

    def test_empty_side_warns(self, rng):
        img = rng.uniform(size=(3, 3))
        with pytest.warns(EmptyMaskWarning):
            s = masked_similarity(MaskedPair(img, np.ones((3, 3)), img, np.zeros((3, 3))))
        assert s == 0.0

    def test_hand_histograms(self):
        # 4 bins. Reference mask keeps {0.1, 0.1, 0.6} -> counts (2, 0, 1, 0)
        # generated mask keeps {0.1, 0.9} -> counts (1, 0, 0, 1)
        ref = np.array([[0.1, 0.1], [0.6, 0.95]])
        gen = np.array([[0.1, 0.5], [0.9, 0.3]])
        pair = MaskedPair(ref, np.array([[1, 1], [1, 0]]), gen, np.array([[1, 0], [1, 0]]))
        expected = 2 / (math.sqrt(5) * math.sqrt(2))
        assert masked_similarity(pair, HistogramExtractor(bins=4)) == pytest.approx(expected, rel=1e-15)

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(5, 5)), rng.uniform(size=(5, 5))
        ma, mb = rng.integers(0, 2, (5, 5)), rng.integers(0, 2, (5, 5))
        assert masked_similarity(MaskedPair(a, ma, b, mb)) == masked_similarity(MaskedPair(b, mb, a, ma))

    def test_invariant_outside_masks(self, rng):
        a, b = rng.uniform(size=(5, 5)), rng.uniform(size=(5, 5))
        m = rng.integers(0, 2, (5, 5))
        m[2, 2] = 1
        a2, b2 = a.copy(), b.copy()
        a2[m == 0] = rng.uniform(size=int((m == 0).sum()))
        b2[m == 0] = 0.77
        assert masked_similarity(MaskedPair(a, m, b, m)) == masked_similarity(MaskedPair(a2, m, b2, m))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            MaskedPair(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(DimensionError):
            MaskedPair(np.ones((2, 2)), np.full((2, 2), 0.5), np.ones((2, 2)), np.ones((2, 2)))


class TestReport:
    def test_schema_and_order(self, rng):
        report = ablation_report(fake_results(rng), rng.uniform(size=(4, 4)))
        rows = list(csv.reader(io.StringIO(report.to_csv())))
        assert rows[0] == list(REPORT_COLUMNS)
        assert [r[0] for r in rows[1:]] == [label for _, label in VARIANTS]
        assert all(len(r) == 4 for r in rows)

    def test_cells_recomputed(self, rng):
        results = fake_results(rng)
        ref = rng.uniform(size=(4, 4))
        ref_mask = rng.integers(0, 2, (4, 4))
        ref_mask[0, 0] = 1
        report = ablation_report(results, ref, ref_mask)
        ref_u = (ref - ref.min()) / (ref.max() - ref.min())
        for row, res in zip(report.rows, results):
            gen = unit_range(latent_to_image(res.z0))[0]
            gm = res.final_mask.as_grid()
            assert row["masked_sim"] == masked_similarity(MaskedPair(ref_u, ref_mask, gen, gm))
            ones = np.ones((4, 4))
            assert row["unmasked_sim"] == masked_similarity(MaskedPair(ref_u, ones, gen, ones))
            assert row["mask_coverage"] == res.final_mask.coverage

    def test_identical_results_identical_rows(self, rng):
        report = ablation_report(fake_results(rng, same=True), rng.uniform(size=(4, 4)))
        vals = [tuple(r[c] for c in REPORT_COLUMNS[1:]) for r in report.rows]
        assert len(set(vals)) == 1

    def test_missing_variant(self, rng):
        with pytest.raises(ReportError):
            ablation_report(fake_results(rng)[:3], rng.uniform(size=(4, 4)))

    def test_deterministic(self, rng):
        results = fake_results(rng)
        ref = rng.uniform(size=(4, 4))
        assert ablation_report(results, ref).to_csv() == ablation_report(results, ref).to_csv()
