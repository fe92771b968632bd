"""
Reference pluvial flood model.

A deterministic stand-in for a production hydrological model: spatially
uniform rain, a constant infiltration loss and steepest-descent overland
routing. Every timestep:

a) rain is added to every domain cell;
b) infiltration removes up to ``infiltration_rate * timestep`` per cell;
c) ``routing_sweeps`` sweeps visit domain cells in row-major order and move
   ``min(depth, k * (s(c) - s(n)) / 2)`` towards the lowest-surface
   neighbour ``n`` (scan order N, NE, E, SE, S, SW, W, NW breaks ties).

The domain is the set of non-nodata cells. Positions off the grid are not
neighbours. Nodata neighbours form an open boundary: their surface is the
routed cell's ground elevation and water moved into them leaves as outflow.
Budget quantities are volumes in cubic meters.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from ..core.errors import ModelError
from .raster import Raster
from .risk_metrics import DEFAULT_THRESHOLD, ExtentMask, extent_mask

logger = logging.getLogger(__name__)

NEIGHBOUR_OFFSETS = (
    (-1, 0),   # N
    (-1, 1),   # NE
    (0, 1),    # E
    (1, 1),    # SE
    (1, 0),    # S
    (1, -1),   # SW
    (0, -1),   # W
    (-1, -1),  # NW
)

MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FloodParams:
    infiltration_rate: float = 0.005  # m/h
    routing_coefficient: float = 0.5
    routing_sweeps: int = 4
    timestep: float = 1.0  # hours
    steps_per_day: int = 24

    def validate(self) -> 'FloodParams':
        if not (math.isfinite(self.infiltration_rate) and self.infiltration_rate >= 0):
            raise ModelError(f"infiltration_rate must be >= 0, got {self.infiltration_rate}")
        if not (0 < self.routing_coefficient <= 1):
            raise ModelError(f"routing_coefficient must be in (0, 1], got {self.routing_coefficient}")
        if isinstance(self.routing_sweeps, bool) or int(self.routing_sweeps) != self.routing_sweeps \
                or self.routing_sweeps < 1:
            raise ModelError(f"routing_sweeps must be a positive integer, got {self.routing_sweeps}")
        if not (math.isfinite(self.timestep) and self.timestep > 0):
            raise ModelError(f"timestep must be > 0, got {self.timestep}")
        if int(self.steps_per_day) != self.steps_per_day or self.steps_per_day < 1:
            raise ModelError(f"steps_per_day must be a positive integer, got {self.steps_per_day}")
        return self

    @classmethod
    def from_dict(cls, params: Dict) -> 'FloodParams':
        known = {k: params[k] for k in cls.__dataclass_fields__ if k in params and params[k] is not None}
        try:
            return cls(**known).validate()
        except TypeError as e:
            raise ModelError(f"Invalid flood parameters: {e}") from e


@dataclass(frozen=True)
class PrecipSeries:
    """Spatially uniform rain rates in m/h, one per timestep starting at index `start`."""
    rates: Sequence[float]
    start: int = 0

    def __post_init__(self):
        for position, rate in enumerate(self.rates):
            if not (isinstance(rate, (int, float)) and math.isfinite(rate)):
                raise ModelError(f"Precipitation rate at t={self.start + position} is not finite")
            if rate < 0:
                raise ModelError(f"Precipitation rate at t={self.start + position} is negative: {rate}")

    def __len__(self) -> int:
        return len(self.rates)

    @classmethod
    def from_csv(cls, text: str) -> 'PrecipSeries':
        """Parse lines ``t,rate`` (an optional header line is skipped)."""
        indices: List[int] = []
        rates: List[float] = []
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ModelError(f"precip line {number}: expected 't,rate', got {line!r}")
            if number == 1 and not parts[0].lstrip("-").isdigit():
                continue
            try:
                indices.append(int(parts[0]))
                rates.append(float(parts[1]))
            except ValueError as e:
                raise ModelError(f"precip line {number}: {e}") from e
        if indices and indices != list(range(indices[0], indices[0] + len(indices))):
            raise ModelError("Precipitation timestep indices must be contiguous and ascending")
        return cls(rates=tuple(rates), start=indices[0] if indices else 0)

    def to_csv(self) -> str:
        lines = ["t,rate"]
        lines.extend(f"{self.start + i},{repr(float(r))}" for i, r in enumerate(self.rates))
        return "\n".join(lines) + "\n"


@dataclass
class WaterBudget:
    precip_in: float = 0.0
    infiltrated: float = 0.0
    outflow: float = 0.0
    stored: float = 0.0

    @property
    def residual(self) -> float:
        return self.precip_in - (self.stored + self.infiltrated + self.outflow)

    @property
    def relative_error(self) -> float:
        if self.precip_in == 0:
            return abs(self.residual)
        return abs(self.residual) / self.precip_in

    def closes(self, tolerance: float = MASS_TOLERANCE) -> bool:
        return self.relative_error <= tolerance

    def to_dict(self) -> Dict[str, float]:
        return {
            "precip_in": self.precip_in,
            "infiltrated": self.infiltrated,
            "outflow": self.outflow,
            "stored": self.stored,
            "relative_error": self.relative_error,
            "units": "m3",
        }


@dataclass
class FloodResult:
    depth: Raster
    depth_max: Raster
    daily_max: List[Raster] = field(default_factory=list)
    budget: WaterBudget = field(default_factory=WaterBudget)


def interior_nodata(dem: Raster) -> np.ndarray:
    """
    Nodata cells not connected to the grid edge through other nodata cells.

    Nodata is only allowed as a border collar; these cells are holes.
    """
    nodata = dem.nodata_mask
    nrows, ncols = nodata.shape
    collar = np.zeros_like(nodata)
    queue = deque()
    for r in range(nrows):
        for c in range(ncols):
            on_edge = r in (0, nrows - 1) or c in (0, ncols - 1)
            if on_edge and nodata[r, c]:
                collar[r, c] = True
                queue.append((r, c))
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < nrows and 0 <= cc < ncols and nodata[rr, cc] and not collar[rr, cc]:
                collar[rr, cc] = True
                queue.append((rr, cc))
    return nodata & ~collar


def _neighbour_table(nodata: List[bool], nrows: int, ncols: int) -> List[List[tuple]]:
    table: List[List[tuple]] = [[] for _ in range(nrows * ncols)]
    for r in range(nrows):
        for c in range(ncols):
            i = r * ncols + c
            if nodata[i]:
                continue
            for dr, dc in NEIGHBOUR_OFFSETS:
                rr, cc = r + dr, c + dc
                if 0 <= rr < nrows and 0 <= cc < ncols:
                    j = rr * ncols + cc
                    table[i].append((j, nodata[j]))
    return table


def simulate(dem: Raster, precip: PrecipSeries, params: FloodParams) -> FloodResult:
    """
    Run the flood model.

    Args:
        dem: Ground elevations; nodata only as a border collar
        precip: Uniform rain rates (m/h)
        params: Model parameters

    Returns:
        Final depth, per-cell maximum depth, per-day maxima and the water budget

    Raises:
        ModelError: On invalid params, interior nodata or a non-finite state
    """
    params.validate()
    holes = interior_nodata(dem)
    if holes.any():
        raise ModelError(f"DEM has {int(holes.sum())} interior nodata cells")
    valid = dem.values[~dem.nodata_mask]
    if not np.all(np.isfinite(valid)):
        raise ModelError("DEM contains non-finite elevations")

    nrows, ncols = dem.shape
    elev = dem.values.ravel().tolist()
    nodata = dem.nodata_mask.ravel().tolist()
    domain = [i for i, missing in enumerate(nodata) if not missing]
    neighbours = _neighbour_table(nodata, nrows, ncols)

    k = float(params.routing_coefficient)
    dt = float(params.timestep)
    loss = float(params.infiltration_rate) * dt
    sweeps = int(params.routing_sweeps)
    per_day = int(params.steps_per_day)

    depth = [0.0] * len(elev)
    peak = [0.0] * len(elev)
    days: List[List[float]] = []
    precip_in = infiltrated = outflow = 0.0

    for t, rate in enumerate(precip.rates):
        added = float(rate) * dt
        if added > 0:
            for i in domain:
                depth[i] += added
            precip_in += added * len(domain)

        if loss > 0:
            for i in domain:
                d = depth[i]
                if d > loss:
                    depth[i] = d - loss
                    infiltrated += loss
                elif d > 0:
                    depth[i] = 0.0
                    infiltrated += d

        for _ in range(sweeps):
            for i in domain:
                d = depth[i]
                if d <= 0.0:
                    continue
                ground = elev[i]
                best = -1
                best_surface = math.inf
                best_border = False
                for j, border in neighbours[i]:
                    surface = ground if border else elev[j] + depth[j]
                    if surface < best_surface:
                        best_surface = surface
                        best = j
                        best_border = border
                head = ground + d - best_surface
                if best < 0 or head <= 0.0:
                    continue
                q = k * head / 2.0
                if q > d:
                    q = d
                depth[i] = d - q
                if best_border:
                    outflow += q
                else:
                    depth[best] += q

        if t % per_day == 0:
            days.append([0.0] * len(elev))
        today = days[-1]
        for i in domain:
            d = depth[i]
            if d > peak[i]:
                peak[i] = d
            if d > today[i]:
                today[i] = d

    if not days:
        days.append([0.0] * len(elev))

    area = dem.header.cell_area
    stored = math.fsum(depth[i] for i in domain)
    budget = WaterBudget(
        precip_in=precip_in * area,
        infiltrated=infiltrated * area,
        outflow=outflow * area,
        stored=stored * area,
    )
    if not all(math.isfinite(v) for v in (budget.precip_in, budget.infiltrated, budget.outflow, budget.stored)):
        raise ModelError("Non-finite water budget")

    mask = dem.nodata_mask
    fill = dem.header.nodata_value

    def to_raster(values: List[float]) -> Raster:
        grid = np.array(values, dtype=np.float64).reshape(dem.shape)
        grid[mask] = fill
        return dem.like(grid)

    depth_raster = to_raster(depth)
    if not np.all(np.isfinite(depth_raster.values)):
        raise ModelError("Non-finite depth encountered")
    logger.debug(
        f"Simulated {len(precip)} timesteps on {len(domain)} cells; "
        f"budget relative error {budget.relative_error:.3e}"
    )
    return FloodResult(
        depth=depth_raster,
        depth_max=to_raster(peak),
        daily_max=[to_raster(day) for day in days],
        budget=budget,
    )


def extent(depth: Raster, threshold: float = DEFAULT_THRESHOLD) -> ExtentMask:
    """Flood extent of a depth raster (shared with the metrics module)."""
    return extent_mask(depth, threshold)
