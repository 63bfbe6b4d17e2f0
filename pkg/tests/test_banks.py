import numpy as np
import pytest

from openpatch import (
    UNKNOWN,
    ClassMemoryBank,
    MatchRecord,
    PatchEmbedding,
    SampleEmbeddingSet,
    ScoreReport,
    UnifiedBank,
    collect_class_banks,
)


def make_sample(sample_id=0, label=0, p=3, c=4, anchors=False, global_dim=None, rng=None):
    rng = rng or np.random.default_rng(0)
    return SampleEmbeddingSet(
        sample_id,
        label,
        rng.standard_normal((p, c)).astype(np.float32),
        rng.standard_normal((p, 3)).astype(np.float32) if anchors else None,
        rng.standard_normal(global_dim).astype(np.float32) if global_dim else None,
    )


class TestPatchEmbedding:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="NaN or Inf"):
            PatchEmbedding([1.0, np.nan], 0, 0)

    def test_rejects_bad_anchor_shape(self):
        with pytest.raises(ValueError, match="anchor_point"):
            PatchEmbedding([1.0, 2.0], 0, 0, anchor_point=[1.0, 2.0])

    def test_values_are_immutable(self):
        patch = PatchEmbedding([1.0, 2.0], 0, 0)
        with pytest.raises(ValueError):
            patch.values[0] = 5.0

    def test_equality_is_bit_exact(self):
        a = PatchEmbedding([1.0, 2.0], 0, 0)
        b = PatchEmbedding([1.0, 2.0], 0, 0)
        c = PatchEmbedding([1.0, 2.0001], 0, 0)
        assert a == b
        assert a != c


class TestSampleEmbeddingSet:
    def test_requires_at_least_one_patch(self):
        with pytest.raises(ValueError):
            SampleEmbeddingSet(0, 0, np.empty((0, 4), dtype=np.float32))

    def test_label_below_unknown_rejected(self):
        with pytest.raises(ValueError, match="label"):
            make_sample(label=-2)

    def test_from_patches_requires_unique_indices(self):
        patches = [PatchEmbedding([1.0], 0, 7), PatchEmbedding([2.0], 0, 7)]
        with pytest.raises(ValueError, match="unique"):
            SampleEmbeddingSet.from_patches(7, 0, patches)

    def test_from_patches_round_trips_through_views(self):
        sample = make_sample(sample_id=3, label=1, anchors=True)
        rebuilt = SampleEmbeddingSet.from_patches(3, 1, list(sample.patches()))
        assert np.array_equal(rebuilt.features, sample.features)
        assert np.array_equal(rebuilt.anchors, sample.anchors)

    def test_anchor_shape_checked(self):
        with pytest.raises(ValueError, match="anchors"):
            SampleEmbeddingSet(0, 0, np.ones((2, 4), np.float32), anchors=np.ones((3, 3), np.float32))


class TestUnifiedBank:
    def bank(self, class_id, n=2, c=4):
        rng = np.random.default_rng(class_id)
        prov = np.column_stack([np.arange(n), np.zeros(n, dtype=np.int64)])
        return ClassMemoryBank(class_id, rng.standard_normal((n, c)).astype(np.float32), prov)

    def test_dense_class_ids_enforced(self):
        with pytest.raises(ValueError, match="dense"):
            UnifiedBank({0: self.bank(0), 2: self.bank(2)}, 4, {})

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dim"):
            UnifiedBank({0: self.bank(0, c=4), 1: self.bank(1, c=5)}, 4, {})

    def test_total_is_disjoint_union(self):
        bank = UnifiedBank({0: self.bank(0, n=2), 1: self.bank(1, n=3)}, 4, {"seed": "0"})
        assert bank.total_patches == 5
        assert bank.class_count == 2

    def test_class_set_matches_support_labels(self):
        support = [make_sample(i, label, rng=np.random.default_rng(i)) for i, label in enumerate([0, 1, 1, 2])]
        banks = collect_class_banks(support)
        assert sorted(banks) == [0, 1, 2]
        assert banks[1].patch_count == 2 * support[0].patch_count


class TestCollectClassBanks:
    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError, match="UNKNOWN"):
            collect_class_banks([make_sample(label=UNKNOWN)])

    def test_provenance_points_back_to_samples(self):
        support = [make_sample(5, 0), make_sample(9, 0, rng=np.random.default_rng(1))]
        bank = collect_class_banks(support)[0]
        assert bank.provenance[:, 0].tolist() == [5, 5, 5, 9, 9, 9]
        assert bank.provenance[:, 1].tolist() == [0, 1, 2, 0, 1, 2]


class TestScoreReport:
    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            ScoreReport(0, np.array([0.5, 0.4]), {}, ())

    def test_entropy_bound_checked(self):
        with pytest.raises(ValueError, match="entropy"):
            ScoreReport(0, np.array([0.5, 0.5]), {"entropy": -5.0}, ())

    def test_unknown_score_name_rejected(self):
        with pytest.raises(ValueError, match="unknown score"):
            ScoreReport(0, np.array([1.0]), {"bogus": 1.0}, ())


def test_match_record_rejects_negative_distance():
    with pytest.raises(ValueError, match="distance"):
        MatchRecord(0, -1.0, 0, (0, 0))
