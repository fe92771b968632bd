import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cimf.science.raster import DEFAULT_NODATA, AlignmentError, Raster
from cimf.science.risk_metrics import (
    EnsembleStack,
    MetricSpec,
    contingency,
    days_above_threshold,
    ensemble_metric,
    exceedance_probability,
    extent_mask,
    iou,
    max_depth,
)

depths = st.floats(min_value=0.0, max_value=2.0, allow_nan=False, allow_infinity=False)
cubes = st.tuples(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5)).flatmap(
    lambda shape: arrays(np.float64, shape, elements=depths)
)
mask_pairs = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda shape: st.tuples(arrays(np.bool_, shape), arrays(np.bool_, shape))
)


def stack_of(cube, cellsize=10.0):
    return EnsembleStack([Raster.from_array(layer, cellsize=cellsize) for layer in cube])


class TestExceedanceProbability:
    def test_fraction_of_members(self):
        cube = np.array([[[0.0, 0.2]], [[0.15, 0.3]], [[0.1, 0.0]], [[0.5, 0.14]], [[0.01, 0.2]]])
        result = exceedance_probability(stack_of(cube), 0.15)
        assert result.values.tolist() == [[0.4, 0.6]]

    def test_threshold_is_inclusive(self):
        result = exceedance_probability(stack_of(np.full((2, 1, 1), 0.15)), 0.15)
        assert result.values[0, 0] == 1.0

    @settings(max_examples=100, deadline=None)
    @given(cube=cubes, threshold=st.floats(0.0, 2.0))
    def test_matches_brute_force(self, cube, threshold):
        result = exceedance_probability(stack_of(cube), threshold)
        members, rows, cols = cube.shape
        for r in range(rows):
            for c in range(cols):
                expected = sum(1 for m in range(members) if cube[m, r, c] >= threshold) / members
                assert result.values[r, c] == pytest.approx(expected)
        assert np.all((result.values >= 0) & (result.values <= 1))

    @settings(max_examples=50, deadline=None)
    @given(cube=cubes, low=st.floats(0.0, 1.0), delta=st.floats(0.0, 1.0))
    def test_monotone_in_threshold(self, cube, low, delta):
        stack = stack_of(cube)
        assert np.all(exceedance_probability(stack, low).values >= exceedance_probability(stack, low + delta).values)

    @settings(max_examples=50, deadline=None)
    @given(cube=cubes, seed=st.integers(0, 2**32 - 1))
    def test_member_order_does_not_matter(self, cube, seed):
        shuffled = cube[np.random.Generator(np.random.PCG64(seed)).permutation(cube.shape[0])]
        assert np.array_equal(exceedance_probability(stack_of(cube)).values,
                              exceedance_probability(stack_of(shuffled)).values)

    def test_nodata_in_any_member_is_nodata(self):
        cube = np.array([[[0.2, 0.2]], [[DEFAULT_NODATA, 0.0]]])
        result = exceedance_probability(stack_of(cube))
        assert result.values[0, 0] == DEFAULT_NODATA
        assert result.values[0, 1] == 0.5

    def test_single_member_is_binary(self):
        result = exceedance_probability(stack_of(np.array([[[0.0, 0.3]]])))
        assert result.values.tolist() == [[0.0, 1.0]]

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            exceedance_probability(stack_of(np.zeros((1, 1, 1))), -0.1)


class TestEnsembleStack:
    def test_misaligned_members(self):
        with pytest.raises(AlignmentError):
            EnsembleStack([Raster.from_array(np.zeros((2, 2))), Raster.from_array(np.zeros((2, 2)), cellsize=5)])

    def test_empty_and_duplicate_labels(self):
        with pytest.raises(ValueError):
            EnsembleStack([])
        raster = Raster.from_array(np.zeros((1, 1)))
        with pytest.raises(ValueError):
            EnsembleStack([raster, raster], labels=["a", "a"])

    def test_max_depth(self):
        cube = np.array([[[0.1, DEFAULT_NODATA]], [[0.4, 0.2]]])
        assert max_depth(stack_of(cube)).values.tolist() == [[0.4, DEFAULT_NODATA]]


class TestIoU:
    @pytest.mark.parametrize("a,b,value,empty", [
        ([[1, 1], [0, 0]], [[1, 0], [0, 0]], 0.5, False),
        ([[1, 0]], [[0, 1]], 0.0, False),
        ([[1, 1]], [[1, 1]], 1.0, False),
        ([[0, 0]], [[0, 0]], 1.0, True),
    ])
    def test_known_cases(self, a, b, value, empty):
        result = iou(np.array(a), np.array(b))
        assert result.value == value
        assert result.empty_union is empty

    @settings(max_examples=100, deadline=None)
    @given(pair=mask_pairs)
    def test_properties(self, pair):
        a, b = pair
        forward = iou(a, b)
        assert 0.0 <= forward.value <= 1.0
        assert forward.value == iou(b, a).value
        assert iou(a, a).value == 1.0
        assert contingency(a, b).csi == forward.value
        assert forward.intersection <= forward.union

    def test_shape_mismatch(self):
        with pytest.raises(AlignmentError):
            iou(np.zeros((2, 2), dtype=bool), np.zeros((2, 3), dtype=bool))

    def test_masks_on_different_grids(self):
        a = extent_mask(Raster.from_array(np.ones((2, 2))))
        b = extent_mask(Raster.from_array(np.ones((2, 2)), xllcorner=100))
        with pytest.raises(AlignmentError):
            iou(a, b)


class TestContingency:
    def test_scores(self):
        predicted = np.array([[1, 1, 0, 0]], dtype=bool)
        observed = np.array([[1, 0, 1, 0]], dtype=bool)
        table = contingency(predicted, observed)

        assert (table.hits, table.misses, table.false_alarms, table.correct_negatives) == (1, 1, 1, 1)
        assert table.pod == 0.5
        assert table.far == 0.5
        assert table.csi == pytest.approx(1 / 3)

    def test_degenerate_scores(self):
        table = contingency(np.zeros((1, 2), dtype=bool), np.zeros((1, 2), dtype=bool))
        assert (table.pod, table.far, table.csi) == (1.0, 0.0, 1.0)


class TestExtentMask:
    def test_nodata_is_dry_and_counted(self):
        raster = Raster.from_array([[0.2, DEFAULT_NODATA], [0.15, 0.1]])
        extent = extent_mask(raster, 0.15)

        assert extent.mask.tolist() == [[True, False], [True, False]]
        assert extent.nodata_count == 1
        assert extent.cells == 2
        assert extent.to_raster(raster).values.tolist() == [[1.0, DEFAULT_NODATA], [1.0, 0.0]]


class TestDaysAboveThreshold:
    def test_counts_days(self):
        series = [Raster.from_array([[0.2, 0.0]]), Raster.from_array([[0.15, 0.3]]), Raster.from_array([[0.0, 0.0]])]
        assert days_above_threshold(series, 0.15).values.tolist() == [[2.0, 1.0]]

    def test_empty_series(self):
        with pytest.raises(ValueError):
            days_above_threshold([])


class TestEnsembleMetric:
    def members(self):
        return {
            "y2001": [Raster.from_array([[0.2, 0.0]]), Raster.from_array([[0.3, 0.0]])],
            "y2002": [Raster.from_array([[0.0, 0.1]]), Raster.from_array([[0.0, 0.2]])],
        }

    def test_exceedance_of_member_maxima(self):
        result = ensemble_metric(self.members(), MetricSpec())
        assert result.values.tolist() == [[0.5, 0.5]]

    def test_max_depth(self):
        result = ensemble_metric(self.members(), MetricSpec(metric="max_depth"))
        assert result.values.tolist() == [[0.3, 0.2]]

    def test_mean_days_above_threshold(self):
        result = ensemble_metric(self.members(), MetricSpec(metric="days_above_threshold"))
        assert result.values.tolist() == [[1.0, 0.5]]

    @pytest.mark.parametrize("kwargs", [
        {"metric": "median"},
        {"threshold": -1.0},
        {"per_member_reduction": "mean"},
        {"metric": "days_above_threshold", "per_member_reduction": "max_over_time"},
        {"metric": "max_depth", "per_member_reduction": "count_days_over_threshold"},
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValueError):
            MetricSpec(**kwargs)

    def test_empty_ensemble(self):
        with pytest.raises(ValueError):
            ensemble_metric({}, MetricSpec())
