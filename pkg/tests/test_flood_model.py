import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cimf.core.errors import ModelError
from cimf.science.flood_model import FloodParams, PrecipSeries, extent, interior_nodata, simulate
from cimf.science.raster import DEFAULT_NODATA, Raster
from cimf.science.synthetic import storm, storm_members, synthetic_dem, truth_extent

CLOSED = FloodParams(infiltration_rate=0.0)


def pit():
    return Raster.from_array([[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])


def collared(ground=5.0):
    values = np.full((3, 3), DEFAULT_NODATA)
    values[1, 1] = ground
    return Raster.from_array(values)


rain_rates = st.lists(st.one_of(st.just(0.0), st.floats(1e-4, 0.05)), min_size=1, max_size=6)
elevations = st.integers(2, 6).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(0.0, 5.0, allow_nan=False, allow_infinity=False))
)


class TestSimulate:
    def test_zero_rain(self):
        result = simulate(synthetic_dem(8), PrecipSeries(rates=(0.0, 0.0)), FloodParams())
        assert not result.depth.values.any()
        assert result.budget.precip_in == 0.0
        assert result.budget.closes()

    def test_single_cell_accumulates_rain(self):
        result = simulate(Raster.from_array([[3.0]]), PrecipSeries(rates=(0.01, 0.02)), CLOSED)
        assert result.depth.values[0, 0] == pytest.approx(0.03)
        assert result.budget.outflow == 0.0

    def test_infiltration_caps_at_available_water(self):
        params = FloodParams(infiltration_rate=0.015)
        result = simulate(Raster.from_array([[3.0]]), PrecipSeries(rates=(0.01, 0.02)), params)
        assert result.depth.values[0, 0] == pytest.approx(0.005)
        assert result.budget.infiltrated == pytest.approx(0.025)

    def test_water_collects_in_a_pit(self):
        result = simulate(pit(), PrecipSeries(rates=(0.01, 0.01)), CLOSED)
        expected = np.zeros((3, 3))
        expected[1, 1] = 0.18
        np.testing.assert_allclose(result.depth.values, expected, atol=1e-12)
        assert result.budget.closes()

    def test_open_boundary_drains(self):
        result = simulate(collared(), PrecipSeries(rates=(0.01,)), CLOSED)
        assert result.depth.values[1, 1] == pytest.approx(0.01 * 0.75 ** 4)
        assert result.budget.outflow == pytest.approx(0.01 * (1 - 0.75 ** 4))
        assert result.depth.values[0, 0] == DEFAULT_NODATA
        assert result.budget.closes()

    def test_daily_maxima(self):
        params = FloodParams(infiltration_rate=0.0, steps_per_day=2)
        result = simulate(Raster.from_array([[3.0]]), PrecipSeries(rates=(0.01,) * 5), params)
        assert len(result.daily_max) == 3
        assert [day.values[0, 0] for day in result.daily_max] == pytest.approx([0.02, 0.04, 0.05])
        assert result.depth_max.values[0, 0] == pytest.approx(0.05)

    def test_deterministic(self):
        dem = synthetic_dem(12)
        first = simulate(dem, storm(), FloodParams())
        second = simulate(dem, storm(), FloodParams())
        assert first.depth_max.equals(second.depth_max)
        assert first.budget == second.budget

    def test_more_rain_never_lowers_depth_on_flat_ground(self):
        flat = Raster.from_array(np.full((5, 5), 2.0))
        light = simulate(flat, storm(scale=1.0), FloodParams())
        heavy = simulate(flat, storm(scale=2.0), FloodParams())
        assert np.all(heavy.depth_max.values >= light.depth_max.values)

    def test_more_infiltration_never_raises_depth_on_flat_ground(self):
        flat = Raster.from_array(np.full((5, 5), 2.0))
        dry = simulate(flat, storm(), FloodParams(infiltration_rate=0.01))
        wet = simulate(flat, storm(), FloodParams(infiltration_rate=0.001))
        assert np.all(wet.depth_max.values >= dry.depth_max.values)

    @settings(max_examples=60, deadline=None)
    @given(
        dem=elevations,
        rates=rain_rates,
        collar=st.booleans(),
        infiltration=st.floats(0.0, 0.01),
        coefficient=st.floats(0.05, 1.0),
        sweeps=st.integers(1, 4),
    )
    def test_mass_is_conserved_and_depths_stay_nonnegative(self, dem, rates, collar, infiltration, coefficient,
                                                           sweeps):
        values = dem.copy()
        if collar and values.shape[0] >= 3:
            values[0, :] = values[-1, :] = values[:, 0] = values[:, -1] = DEFAULT_NODATA
        params = FloodParams(infiltration_rate=infiltration, routing_coefficient=coefficient, routing_sweeps=sweeps)
        result = simulate(Raster.from_array(values), PrecipSeries(rates=tuple(rates)), params)

        assert result.budget.closes()
        valid = ~result.depth.nodata_mask
        assert np.all(result.depth.values[valid] >= 0)
        assert np.all(result.depth_max.values[valid] >= result.depth.values[valid])

    def test_interior_hole_is_rejected(self):
        values = np.full((4, 4), 1.0)
        values[1, 1] = DEFAULT_NODATA
        dem = Raster.from_array(values)
        assert interior_nodata(dem).sum() == 1
        with pytest.raises(ModelError):
            simulate(dem, storm(), FloodParams())

    def test_extent_of_depth(self):
        depth = Raster.from_array([[0.0, 0.2], [0.15, DEFAULT_NODATA]])
        assert extent(depth).mask.tolist() == [[False, True], [True, False]]


class TestFloodParams:
    @pytest.mark.parametrize("kwargs", [
        {"infiltration_rate": -0.1},
        {"routing_coefficient": 0.0},
        {"routing_coefficient": 1.5},
        {"routing_sweeps": 0},
        {"routing_sweeps": 1.5},
        {"timestep": 0.0},
        {"steps_per_day": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ModelError):
            FloodParams(**kwargs).validate()

    def test_from_dict_ignores_unknown_and_missing(self):
        params = FloodParams.from_dict({"infiltration_rate": 0.01, "threshold": 0.15, "timestep": None})
        assert params == FloodParams(infiltration_rate=0.01)


class TestPrecipSeries:
    def test_csv_round_trip_with_offset(self):
        series = PrecipSeries(rates=(0.0, 0.01, 0.025), start=3)
        assert PrecipSeries.from_csv(series.to_csv()) == series

    def test_header_and_comments_are_skipped(self):
        series = PrecipSeries.from_csv("t,rate\n# hourly\n0,0.01\n1,0.02\n")
        assert series.rates == (0.01, 0.02)

    @pytest.mark.parametrize("text", [
        "0,0.01\n2,0.02\n",
        "0,0.01,7\n",
        "0,wet\n",
        "0,-0.01\n",
        "0,nan\n",
    ])
    def test_invalid(self, text):
        with pytest.raises(ModelError):
            PrecipSeries.from_csv(text)


class TestSyntheticInputs:
    def test_dem_is_deterministic(self):
        assert synthetic_dem(10, seed=3).equals(synthetic_dem(10, seed=3))
        assert not synthetic_dem(10, seed=3).equals(synthetic_dem(10, seed=4))

    def test_dem_collar(self):
        dem = synthetic_dem(6, collar=True)
        assert dem.nodata_mask[0].all() and dem.nodata_mask[:, -1].all()
        assert not dem.nodata_mask[1:-1, 1:-1].any()
        assert not interior_nodata(dem).any()

    def test_dem_header(self):
        assert synthetic_dem(8, cellsize=5.0).header.bbox == [0.0, 0.0, 40.0, 40.0]

    def test_storm_is_symmetric(self):
        rates = storm(12).rates
        assert len(rates) == 12
        assert list(rates) == list(reversed(rates))
        assert max(rates) <= 0.03

    def test_storm_members(self):
        members = storm_members(["a", "b", "c"], seed=7)
        assert list(members) == ["a", "b", "c"]
        assert members == storm_members(["a", "b", "c"], seed=7)
        assert len({max(s.rates) for s in members.values()}) == 3

    def test_truth_extent_is_binary(self):
        truth = truth_extent(synthetic_dem(12), storm(), FloodParams(infiltration_rate=0.01))
        assert set(np.unique(truth.values)) <= {0.0, 1.0}
