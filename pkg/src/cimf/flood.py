"""Reference pluvial flood model.

A deliberately simple, deterministic stand-in for a real hydrological
model: spatially uniform rain, a constant infiltration loss, and
Gauss-Seidel style steepest-descent routing over the 8-neighbourhood.

Per time step of length ``dt`` hours:

1. every domain cell gains ``rate * dt`` of water;
2. infiltration removes up to ``infiltration_rate * dt`` from each cell;
3. ``routing_sweeps`` sweeps visit cells in row-major order. A cell sends
   ``min(depth, k * head / 2)`` to its lowest neighbour (by water surface
   ``elevation + depth``; ties go to the first in N, NE, E, SE, S, SW, W,
   NW order) when the head difference is positive.

Cells holding the DEM's nodata value are outside the domain. They act as
free outfalls: their surface is taken as the sending cell's ground
elevation and water moved into them is counted as outflow. Neighbours off
the grid edge do not exist, so an edge without a nodata collar is closed.

Budget quantities are sums of per-cell depths (metres); multiply by
``cell_area`` for volumes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import RasterError
from .raster import Raster

# (drow, dcol) in tie-break order: N, NE, E, SE, S, SW, W, NW
NEIGHBOURS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_OUTFALL = -1


@dataclass(frozen=True)
class FloodParams:
    infiltration_rate: float = 0.005
    routing_coefficient: float = 0.5
    routing_sweeps: int = 4
    timestep: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.infiltration_rate) and self.infiltration_rate >= 0):
            raise ValueError("infiltration_rate must be >= 0")
        if not (0 < self.routing_coefficient <= 1):
            raise ValueError("routing_coefficient must lie in (0, 1]")
        if isinstance(self.routing_sweeps, bool) or int(self.routing_sweeps) != self.routing_sweeps \
                or self.routing_sweeps < 1:
            raise ValueError("routing_sweeps must be a positive integer")
        if not (math.isfinite(self.timestep) and self.timestep > 0):
            raise ValueError("timestep must be > 0")

    @classmethod
    def from_mapping(cls, m) -> "FloodParams":
        names = cls.__dataclass_fields__
        kw = {k: m[k] for k in names if k in m}
        if "routing_sweeps" in kw:
            sweeps = kw["routing_sweeps"]
            if isinstance(sweeps, float) and sweeps.is_integer():
                kw["routing_sweeps"] = int(sweeps)
        return cls(**kw)


@dataclass
class WaterBudget:
    precip_in: float = 0.0
    infiltrated: float = 0.0
    outflow: float = 0.0
    stored: float = 0.0
    cell_area: float = 1.0

    def closure_error(self) -> float:
        """Relative imbalance ``|in - (stored + infiltrated + outflow)| / in``."""
        out = math.fsum([self.stored, self.infiltrated, self.outflow])
        if self.precip_in == 0:
            return abs(out)
        return abs(self.precip_in - out) / self.precip_in

    def to_dict(self) -> dict:
        return asdict(self)


def read_precip(text: str) -> list[float]:
    """Parse ``t,rate`` lines into rates ordered by ``t``.

    An optional ``t,rate`` header line is accepted. Indices must be
    contiguous, starting anywhere.
    """
    rows = []
    for rec in csv.reader(io.StringIO(text)):
        if not rec or not "".join(rec).strip():
            continue
        if len(rec) != 2:
            raise ValueError(f"expected 't,rate', got {rec!r}")
        if not rows and rec[0].strip().lower() == "t":
            continue
        t, rate = int(rec[0]), float(rec[1])
        if not (math.isfinite(rate) and rate >= 0):
            raise ValueError(f"precipitation rate must be finite and >= 0 (t={t})")
        rows.append((t, rate))
    rows.sort()
    for (a, _), (b, _) in zip(rows, rows[1:]):
        if b != a + 1:
            raise ValueError(f"precipitation indices not contiguous at {a} -> {b}")
    return [r for _, r in rows]


def write_precip(rates) -> str:
    out = ["t,rate"]
    out += [f"{t},{float(r)!r}" for t, r in enumerate(rates)]
    return "\n".join(out) + "\n"


def _domain(dem: Raster) -> np.ndarray:
    """Boolean in-domain mask; rejects nodata holes enclosed by the domain."""
    inside = ~dem.nodata_mask
    if not inside.any():
        raise RasterError("DEM has no valid cells")
    if not np.all(np.isfinite(dem.values[inside])):
        raise RasterError("DEM contains non-finite elevations")
    # nodata cells must connect to the grid edge through nodata cells
    outside = ~inside
    reach = np.zeros_like(outside)
    reach[0, :] = outside[0, :]
    reach[-1, :] = outside[-1, :]
    reach[:, 0] |= outside[:, 0]
    reach[:, -1] |= outside[:, -1]
    while True:
        grown = reach.copy()
        grown[1:, :] |= reach[:-1, :]
        grown[:-1, :] |= reach[1:, :]
        grown[:, 1:] |= reach[:, :-1]
        grown[:, :-1] |= reach[:, 1:]
        grown &= outside
        if np.array_equal(grown, reach):
            break
        reach = grown
    if np.any(outside & ~reach):
        raise RasterError("DEM has interior nodata holes")
    return inside


def simulate(dem: Raster, rates, params: FloodParams | None = None) -> tuple[Raster, WaterBudget]:
    """Run the model; returns the final depth raster and the water budget."""
    params = params or FloodParams()
    rates = [float(r) for r in rates]
    if any(not (math.isfinite(r) and r >= 0) for r in rates):
        raise ValueError("precipitation rates must be finite and >= 0")
    inside = _domain(dem)
    nrows, ncols = dem.values.shape
    elev = dem.values.ravel().tolist()
    flat_inside = inside.ravel().tolist()
    cells = [i for i, ok in enumerate(flat_inside) if ok]

    # neighbour lists in tie-break order; _OUTFALL marks a nodata neighbour
    nbrs = []
    for i in cells:
        r, c = divmod(i, ncols)
        lst = []
        for dr, dc in NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < nrows and 0 <= cc < ncols:
                j = rr * ncols + cc
                lst.append(j if flat_inside[j] else _OUTFALL)
        nbrs.append(tuple(lst))
    plan = list(zip(cells, nbrs))

    depth = [0.0] * (nrows * ncols)
    dt = params.timestep
    loss = params.infiltration_rate * dt
    half_k = params.routing_coefficient / 2.0
    sweeps = params.routing_sweeps
    precip_in = []
    infiltrated = []
    outflow = []

    for rate in rates:
        add = rate * dt
        if add:
            for i in cells:
                depth[i] += add
            precip_in.append(add * len(cells))
        if loss:
            for i in cells:
                d = depth[i]
                if d > loss:
                    depth[i] = d - loss
                    infiltrated.append(loss)
                elif d > 0.0:
                    depth[i] = 0.0
                    infiltrated.append(d)
        for _ in range(sweeps):
            for i, lst in plan:
                d = depth[i]
                if d <= 0.0:
                    continue
                ground = elev[i]
                best = None
                best_s = math.inf
                for j in lst:
                    s = ground if j == _OUTFALL else elev[j] + depth[j]
                    if s < best_s:
                        best_s = s
                        best = j
                if best is None:
                    continue
                head = ground + d - best_s
                if head > 0.0:
                    q = half_k * head
                    if q > d:
                        q = d
                    depth[i] = d - q
                    if best == _OUTFALL:
                        outflow.append(q)
                    else:
                        depth[best] += q

    values = np.array(depth, dtype=np.float64).reshape(nrows, ncols)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite depth encountered")
    values[~inside] = dem.nodata
    budget = WaterBudget(
        precip_in=math.fsum(precip_in),
        infiltrated=math.fsum(infiltrated),
        outflow=math.fsum(outflow),
        stored=math.fsum(depth[i] for i in cells),
        cell_area=dem.cellsize ** 2,
    )
    return dem.like(values), budget


def synthetic_dem(size: int = 32, seed: int = 0, relief: float = 2.0, collar: bool = True,
                  xllcorner: float = 0.0, yllcorner: float = 0.0, cellsize: float = 30.0) -> Raster:
    """Deterministic smooth terrain with a few depressions.

    A sloping plane plus a handful of Gaussian bumps and pits; with
    ``collar`` the outermost ring is nodata so water can leave the domain.
    """
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    z = relief * 0.3 * (x + 0.5 * y)
    for _ in range(6):
        cx, cy = rng.uniform(0.15, 0.85, 2)
        w = rng.uniform(0.06, 0.18)
        amp = relief * rng.uniform(-1.0, 0.6)
        z += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * w * w))
    z += rng.normal(0.0, relief * 0.01, z.shape)
    z = np.round(z - z.min() + 10.0, 4)
    dem = Raster(z, xllcorner, yllcorner, cellsize)
    if collar and size > 2:
        z[0, :] = z[-1, :] = z[:, 0] = z[:, -1] = dem.nodata
        dem = dem.like(z)
    return dem


def synthetic_precip(steps: int = 12, seed: int = 0, peak: float = 0.04, label: str = "") -> list[float]:
    """A single storm hyetograph with random timing and intensity.

    ``label`` perturbs the seed so ensemble members differ reproducibly.
    """
    from .hashing import digest_bytes

    mix = int(digest_bytes(f"{seed}:{label}".encode())[:8], 16)
    rng = np.random.default_rng(mix)
    centre = rng.uniform(0.2, 0.8) * (steps - 1)
    width = rng.uniform(0.1, 0.3) * steps + 0.5
    scale = peak * rng.uniform(0.3, 1.5)
    t = np.arange(steps, dtype=np.float64)
    rates = scale * np.exp(-((t - centre) ** 2) / (2 * width * width))
    return [round(float(r), 6) for r in rates]
