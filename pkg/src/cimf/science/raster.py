"""
ESRI ASCII grid rasters.

Header lines ``ncols``, ``nrows``, ``xllcorner``, ``yllcorner``, ``cellsize``,
``nodata_value`` followed by whitespace-separated rows, north row first.
Values are written in shortest round-trip form so write -> read is bit-exact.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np

DEFAULT_NODATA = -9999.0
HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class RasterError(ValueError):
    """Unparseable raster text or invalid raster contents."""


class AlignmentError(ValueError):
    """Rasters that must share a grid do not."""


def _format_number(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


@dataclass(frozen=True)
class RasterHeader:
    ncols: int
    nrows: int
    xllcorner: float
    yllcorner: float
    cellsize: float
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise RasterError(f"Raster dimensions must be positive, got {self.ncols}x{self.nrows}")
        if not self.cellsize > 0:
            raise RasterError(f"cellsize must be positive, got {self.cellsize}")

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def cell_area(self) -> float:
        return self.cellsize * self.cellsize

    @property
    def bbox(self) -> List[float]:
        """[min_x, min_y, max_x, max_y] of the grid's outer edges."""
        return [
            self.xllcorner,
            self.yllcorner,
            self.xllcorner + self.ncols * self.cellsize,
            self.yllcorner + self.nrows * self.cellsize,
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in HEADER_KEYS}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RasterHeader':
        return cls(
            ncols=int(data["ncols"]),
            nrows=int(data["nrows"]),
            xllcorner=float(data["xllcorner"]),
            yllcorner=float(data["yllcorner"]),
            cellsize=float(data["cellsize"]),
            nodata_value=float(data.get("nodata_value", DEFAULT_NODATA)),
        )

    def text(self) -> str:
        return "".join(f"{key:<14}{_format_number(getattr(self, key))}\n" for key in HEADER_KEYS)


@dataclass(frozen=True, eq=False)
class Raster:
    """A georeferenced grid; `values` is a float64 array of shape (nrows, ncols)."""
    header: RasterHeader
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.header.shape:
            raise RasterError(f"Values shape {values.shape} does not match header {self.header.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, values, cellsize: float = 1.0, xllcorner: float = 0.0,
                   yllcorner: float = 0.0, nodata_value: float = DEFAULT_NODATA) -> 'Raster':
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise RasterError("Two-dimensional grid is required")
        header = RasterHeader(
            ncols=values.shape[1],
            nrows=values.shape[0],
            xllcorner=float(xllcorner),
            yllcorner=float(yllcorner),
            cellsize=float(cellsize),
            nodata_value=float(nodata_value),
        )
        return cls(header, values.copy())

    def like(self, values) -> 'Raster':
        """A raster on the same grid with other values."""
        return Raster(self.header, np.asarray(values, dtype=np.float64))

    @property
    def nodata_mask(self) -> np.ndarray:
        return self.values == self.header.nodata_value

    @property
    def shape(self):
        return self.header.shape

    def aligned_with(self, other: 'Raster') -> bool:
        return self.header == other.header

    def check_depths(self) -> None:
        """Depth rasters hold only finite non-negative values outside nodata."""
        valid = self.values[~self.nodata_mask]
        if not np.all(np.isfinite(valid)):
            raise RasterError("Depth raster contains non-finite values")
        if np.any(valid < 0):
            raise RasterError("Depth raster contains negative depths")

    def equals(self, other: 'Raster') -> bool:
        return self.header == other.header and np.array_equal(self.values, other.values)

    def to_ascii(self) -> str:
        lines = [self.header.text()]
        for row in self.values:
            lines.append(" ".join(repr(float(v)) for v in row) + "\n")
        return "".join(lines)

    def to_bytes(self) -> bytes:
        return self.to_ascii().encode("ascii")


def read_ascii(source: Union[str, bytes, Path]) -> Raster:
    """
    Parse an ESRI ASCII grid.

    Args:
        source: Raster text, raw bytes or a path to a file

    Raises:
        RasterError: On malformed header or value count mismatch
    """
    if isinstance(source, Path):
        text = source.read_text(encoding="ascii")
    elif isinstance(source, bytes):
        text = source.decode("ascii")
    else:
        text = source

    lines = text.splitlines()
    header: Dict[str, str] = {}
    index = 0
    while index < len(lines):
        parts = lines[index].split()
        if not parts:
            index += 1
            continue
        key = parts[0].lower()
        if key not in HEADER_KEYS:
            break
        if len(parts) != 2:
            raise RasterError(f"Malformed header line: {lines[index]!r}")
        header[key] = parts[1]
        index += 1

    missing = [key for key in HEADER_KEYS[:5] if key not in header]
    if missing:
        raise RasterError(f"Missing header fields: {missing}")
    try:
        parsed = RasterHeader.from_dict(header)
    except (TypeError, ValueError) as e:
        raise RasterError(f"Invalid header: {e}") from e

    tokens = " ".join(lines[index:]).split()
    expected = parsed.ncols * parsed.nrows
    if len(tokens) != expected:
        raise RasterError(f"Expected {expected} values, found {len(tokens)}")
    try:
        values = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as e:
        raise RasterError(f"Non-numeric raster value: {e}") from e
    return Raster(parsed, values.reshape(parsed.shape))


def write_ascii(raster: Raster, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(raster.to_ascii(), encoding="ascii")
    return path


def check_aligned(rasters: Sequence[Raster]) -> RasterHeader:
    """Return the shared header or raise AlignmentError."""
    if not rasters:
        raise AlignmentError("No rasters given")
    header = rasters[0].header
    for position, raster in enumerate(rasters[1:], start=1):
        if raster.header != header:
            raise AlignmentError(f"Raster {position} is not aligned with raster 0")
    return header


def series_to_json(rasters: Sequence[Raster]) -> bytes:
    """Serialize a time series of aligned rasters (e.g. daily maxima)."""
    header = check_aligned(rasters)
    document = header.to_dict()
    document["days"] = [[float(v) for v in r.values.ravel()] for r in rasters]
    return (json.dumps(document, separators=(",", ":")) + "\n").encode("utf-8")


def series_from_json(data: Union[str, bytes]) -> List[Raster]:
    document = json.loads(data)
    try:
        header = RasterHeader.from_dict(document)
        days = document["days"]
    except (KeyError, TypeError, ValueError) as e:
        raise RasterError(f"Malformed raster series: {e}") from e
    series = []
    for values in days:
        if len(values) != header.ncols * header.nrows:
            raise RasterError("Raster series day has the wrong number of values")
        series.append(Raster(header, np.array(values, dtype=np.float64).reshape(header.shape)))
    if not series:
        raise RasterError("Raster series is empty")
    return series

