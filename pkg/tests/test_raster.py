import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cimf.science.raster import (
    DEFAULT_NODATA,
    AlignmentError,
    Raster,
    RasterError,
    check_aligned,
    read_ascii,
    series_from_json,
    series_to_json,
)

GRID = """ncols 3
nrows 2
xllcorner 100
yllcorner 200.5
cellsize 25
NODATA_value -9999
1 2 3
4 -9999 6.5
"""

grids = st.tuples(st.integers(1, 5), st.integers(1, 5)).flatmap(
    lambda shape: arrays(np.float64, shape, elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False))
)


class TestAsciiGrid:
    def test_read(self):
        raster = read_ascii(GRID)

        assert raster.shape == (2, 3)
        assert raster.header.bbox == [100.0, 200.5, 175.0, 250.5]
        assert raster.values[1, 2] == 6.5
        assert raster.nodata_mask.tolist() == [[False, False, False], [False, True, False]]

    def test_sources(self, tmp_path):
        path = tmp_path / "dem.asc"
        path.write_text(GRID, encoding="ascii")
        assert read_ascii(path).equals(read_ascii(GRID.encode("ascii")))

    @settings(max_examples=50, deadline=None)
    @given(values=grids, cellsize=st.floats(0.5, 100.0))
    def test_text_is_lossless(self, values, cellsize):
        raster = Raster.from_array(values, cellsize=cellsize, xllcorner=-12.5)
        assert read_ascii(raster.to_ascii()).equals(raster)

    @pytest.mark.parametrize("text", [
        "nrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1\n",
        "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1\n",
        "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nwet\n",
        "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 0\n1\n",
        "ncols 1 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1\n",
        "ncols 0\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(RasterError):
            read_ascii(text)

    def test_shape_mismatch(self):
        with pytest.raises(RasterError):
            Raster(read_ascii(GRID).header, np.zeros((3, 3)))


class TestDepths:
    def test_negative_depths(self):
        with pytest.raises(RasterError):
            Raster.from_array([[0.1, -0.1]]).check_depths()

    def test_nodata_is_ignored(self):
        Raster.from_array([[0.1, DEFAULT_NODATA]]).check_depths()


class TestSeries:
    def test_round_trip(self):
        days = [Raster.from_array([[0.1, 0.2]]), Raster.from_array([[0.3, 0.0]])]
        restored = series_from_json(series_to_json(days))
        assert len(restored) == 2
        assert all(a.equals(b) for a, b in zip(days, restored))

    def test_misaligned_days(self):
        with pytest.raises(AlignmentError):
            series_to_json([Raster.from_array([[0.1]]), Raster.from_array([[0.1, 0.2]])])
        with pytest.raises(AlignmentError):
            check_aligned([])

    @pytest.mark.parametrize("document", [
        '{"ncols": 2, "nrows": 1, "xllcorner": 0, "yllcorner": 0, "cellsize": 1}',
        '{"ncols": 2, "nrows": 1, "xllcorner": 0, "yllcorner": 0, "cellsize": 1, "days": [[1]]}',
        '{"ncols": 2, "nrows": 1, "xllcorner": 0, "yllcorner": 0, "cellsize": 1, "days": []}',
    ])
    def test_malformed(self, document):
        with pytest.raises(RasterError):
            series_from_json(document)
