"""
Synthetic inputs for desk-scale experiments and tests.

Everything here is deterministic for a given seed: a bowl-shaped DEM with
ripples that create local depressions, triangular storm hyetographs, storm
ensembles with per-member intensity factors, and ground-truth extents
produced by the reference model itself at known parameters.
"""

from typing import Dict, Iterable

import numpy as np

from .flood_model import FloodParams, PrecipSeries, simulate
from .raster import DEFAULT_NODATA, Raster
from .risk_metrics import DEFAULT_THRESHOLD, extent_mask


def synthetic_dem(size: int = 32, cellsize: float = 10.0, seed: int = 0, collar: bool = False) -> Raster:
    """
    A square DEM rising 2 m from the centre to the edges, with ripples.

    Args:
        size: Cells per side
        cellsize: Cell edge length in meters
        seed: Seed of the small elevation noise
        collar: Replace the outermost ring with nodata (open boundary)
    """
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    centre = (size - 1) / 2
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    radius = np.hypot(rows - centre, cols - centre) / max(centre, 1.0)
    ripples = 0.4 * np.sin(rows / 2.5) * np.cos(cols / 3.0)
    noise = rng.normal(0.0, 0.02, (size, size))
    elevation = np.round(10.0 + 2.0 * radius + ripples + noise, 6)
    if collar and size > 2:
        elevation[0, :] = DEFAULT_NODATA
        elevation[-1, :] = DEFAULT_NODATA
        elevation[:, 0] = DEFAULT_NODATA
        elevation[:, -1] = DEFAULT_NODATA
    return Raster.from_array(elevation, cellsize=cellsize)


def storm(n_steps: int = 12, peak: float = 0.03, scale: float = 1.0) -> PrecipSeries:
    """Triangular hyetograph peaking mid-event, rates in m/h."""
    middle = (n_steps - 1) / 2
    half = middle + 1.0
    rates = tuple(
        round(scale * peak * max(0.0, 1.0 - abs(t - middle) / half), 9) for t in range(n_steps)
    )
    return PrecipSeries(rates=rates)


def storm_members(labels: Iterable[str], seed: int = 0, n_steps: int = 12,
                  peak: float = 0.03) -> Dict[str, PrecipSeries]:
    """One storm per label, each scaled by a factor drawn from [0.3, 1.7)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return {label: storm(n_steps, peak, scale=round(float(rng.uniform(0.3, 1.7)), 6)) for label in labels}


def truth_extent(dem: Raster, precip: PrecipSeries, params: FloodParams,
                 threshold: float = DEFAULT_THRESHOLD) -> Raster:
    """1/0 extent of the peak depth the model produces at `params`."""
    result = simulate(dem, precip, params)
    return extent_mask(result.depth_max, threshold).to_raster(result.depth_max)
