import numpy as np
import pytest

from openvocab_panoptic.core_model import (
    Category,
    ClassDistribution,
    FeatureMap,
    PanopticMap,
    ProposalSet,
    SegmentRecord,
    VocabularyEmbedding,
    normalize_rows,
    stack_distributions,
    validate_panoptic,
    validate_vocabulary,
)
from openvocab_panoptic.errors import RangeError, ShapeError, ZeroNormError


def vocab_of(rows, names=None):
    rows = np.asarray(rows, dtype=np.float64)
    names = names or [f"c{i}" for i in range(len(rows))]
    return VocabularyEmbedding(tuple(Category(name=n) for n in names), rows)


class TestVocabulary:
    def test_single_unit_row_is_valid(self):
        assert validate_vocabulary(vocab_of([[1.0, 0.0]])) == []

    def test_row_norm_two_reports_row_zero(self):
        report = validate_vocabulary(vocab_of([[2.0, 0.0], [0.0, 1.0]]))
        assert len(report) == 1
        assert report[0].indices == (0,)

    def test_duplicate_names_listed_together(self):
        rows = np.eye(4)
        report = validate_vocabulary(vocab_of(rows, ["wall", "sky", "road", "wall"]))
        assert len(report) == 1
        assert report[0].indices == (0, 3)
        assert "wall" in report[0].reason

    def test_empty_vocabulary(self):
        report = validate_vocabulary(VocabularyEmbedding((), np.zeros((0, 3))))
        assert len(report) == 1

    def test_rows_must_match_categories(self):
        with pytest.raises(ShapeError):
            vocab_of(np.eye(3), ["a", "b"])

    def test_flags(self):
        v = VocabularyEmbedding(
            (Category(name="a", seen=True, thing=False), Category(name="b", seen=False, thing=True)), np.eye(2)
        )
        assert v.seen.tolist() == [True, False]
        assert v.thing.tolist() == [False, True]
        assert v.names == ["a", "b"]
        assert len(v) == 2 and v.dim == 2


class TestNormalizeRows:
    def test_three_four_five(self):
        np.testing.assert_allclose(normalize_rows([[3.0, 4.0]]), [[0.6, 0.8]], atol=1e-15)

    def test_unit_row_unchanged(self):
        row = np.array([[0.6, 0.8, 0.0]])
        np.testing.assert_allclose(normalize_rows(row), row, atol=1e-12)

    def test_zero_row_names_index(self):
        with pytest.raises(ZeroNormError) as err:
            normalize_rows([[1.0, 0.0], [0.0, 0.0]])
        assert err.value.row == 1

    def test_zero_first_row(self):
        with pytest.raises(ZeroNormError) as err:
            normalize_rows([[0.0, 0.0]])
        assert err.value.row == 0


class TestArrays:
    def test_feature_map_is_read_only(self):
        f = FeatureMap(np.ones((2, 3, 4)))
        assert (f.height, f.width, f.dim) == (2, 3, 4)
        with pytest.raises(ValueError):
            f.values[0, 0, 0] = 5.0

    def test_feature_map_rejects_nan(self):
        values = np.ones((2, 2, 2))
        values[1, 1, 1] = np.nan
        with pytest.raises(RangeError):
            FeatureMap(values)

    def test_feature_map_rank(self):
        with pytest.raises(ShapeError):
            FeatureMap(np.ones((2, 2)))

    def test_proposal_set_shapes(self):
        p = ProposalSet(np.zeros((3, 4, 5)), np.zeros((3, 7)))
        assert (p.count, p.height, p.width, p.n_train, p.void_index) == (3, 4, 5, 6, 6)
        np.testing.assert_allclose(p.train_probs().sum(axis=1), 1.0)
        sub = p.subset([2, 0])
        assert sub.count == 2

    def test_proposal_set_mismatch(self):
        with pytest.raises(ShapeError):
            ProposalSet(np.zeros((3, 4, 5)), np.zeros((2, 7)))

    def test_empty_proposal_set(self):
        p = ProposalSet.empty(4, 5, 3)
        assert p.count == 0 and p.n_train == 3

    def test_class_distribution_checks(self):
        d = ClassDistribution([0.3, 0.2, 0.5])
        assert d.n_cls == 2 and d.void == 0.5
        with pytest.raises(RangeError):
            ClassDistribution([0.3, 0.3, 0.3])
        with pytest.raises(RangeError):
            ClassDistribution([1.5, -0.5, 0.0])

    def test_stack_distributions(self):
        ds = [ClassDistribution([1.0, 0.0, 0.0]), ClassDistribution([0.0, 0.5, 0.5])]
        assert stack_distributions(ds).shape == (2, 3)
        assert stack_distributions([], n_cls=2).shape == (0, 3)
        with pytest.raises(ShapeError):
            stack_distributions([])


class TestPanopticMap:
    def test_semantic_view(self):
        ids = np.array([[0, 1], [2, 2]])
        m = PanopticMap(ids, (SegmentRecord(id=1, category=4, thing=True), SegmentRecord(id=2, category=0, thing=False)))
        np.testing.assert_array_equal(m.semantic(), [[-1, 4], [0, 0]])
        assert m.segment(2).category == 0
        assert m.mask(1).sum() == 1

    def test_valid_map(self):
        m = PanopticMap(np.array([[1, 1], [0, 2]]),
                        (SegmentRecord(id=1, category=0, thing=True), SegmentRecord(id=2, category=1, thing=True)))
        assert validate_panoptic(m, n_cls=2) == []

    def test_all_void_is_valid(self):
        assert validate_panoptic(PanopticMap.void(3, 3)) == []

    def test_violations(self):
        m = PanopticMap(
            np.array([[1, 5], [0, 0]]),
            (SegmentRecord(id=1, category=0, thing=True),
             SegmentRecord(id=1, category=0, thing=True),
             SegmentRecord(id=3, category=9, thing=True)),
        )
        reasons = {v.reason: v.indices for v in validate_panoptic(m, n_cls=2)}
        assert reasons["duplicate segment ids"] == (1,)
        assert reasons["raster ids without a segment record"] == (5,)
        assert reasons["segment has no pixels"] == (3,)
        assert any("outside vocabulary" in r for r in reasons)
