"""Uniform grids in an ESRI ASCII-grid style text format.

Header keys (case-insensitive, one per line)::

    ncols, nrows, xllcorner, yllcorner, cellsize, nodata_value

followed by ``nrows`` lines of ``ncols`` whitespace-separated values, the
first line being the northernmost row. Values are written with ``repr``
so a write/read round trip is bit-exact.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MisalignedError, RasterError

DEFAULT_NODATA = -9999.0
_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True)
class GridHeader:
    ncols: int
    nrows: int
    xllcorner: float = 0.0
    yllcorner: float = 0.0
    cellsize: float = 1.0
    nodata: float = DEFAULT_NODATA


@dataclass
class Raster:
    values: np.ndarray
    xllcorner: float = 0.0
    yllcorner: float = 0.0
    cellsize: float = 1.0
    nodata: float = DEFAULT_NODATA
    _mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise RasterError(f"raster values must be a non-empty 2-D grid, got shape {self.values.shape}")
        if not self.cellsize > 0:
            raise RasterError("cellsize must be positive")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def header(self) -> GridHeader:
        return GridHeader(self.ncols, self.nrows, self.xllcorner, self.yllcorner,
                          self.cellsize, self.nodata)

    @property
    def nodata_mask(self) -> np.ndarray:
        return self.values == self.nodata

    def like(self, values) -> "Raster":
        return Raster(values, self.xllcorner, self.yllcorner, self.cellsize, self.nodata)

    def aligned_with(self, other: "Raster") -> bool:
        return self.header == other.header

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.aligned_with(other) and np.array_equal(self.values, other.values)


def require_aligned(rasters) -> GridHeader:
    rasters = list(rasters)
    if not rasters:
        raise RasterError("no rasters given")
    head = rasters[0].header
    for i, r in enumerate(rasters[1:], start=1):
        if r.header != head:
            raise MisalignedError(f"raster {i} header {r.header} differs from {head}")
    return head


def check_depths(r: Raster) -> None:
    vals = r.values[~r.nodata_mask]
    if not np.all(np.isfinite(vals)):
        raise RasterError("non-finite depth values")
    if np.any(vals < 0):
        raise RasterError("negative depth values")


def _fmt(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return "-0" if v == 0 and math.copysign(1.0, v) < 0 else repr(int(v))
    return repr(v)


def dumps(r: Raster) -> str:
    lines = [
        f"ncols {r.ncols}",
        f"nrows {r.nrows}",
        f"xllcorner {_fmt(r.xllcorner)}",
        f"yllcorner {_fmt(r.yllcorner)}",
        f"cellsize {_fmt(r.cellsize)}",
        f"nodata_value {_fmt(r.nodata)}",
    ]
    for row in r.values:
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Raster:
    buf = io.StringIO(text)
    header = {}
    for key in _HEADER_KEYS:
        line = buf.readline()
        parts = line.split()
        if len(parts) != 2:
            raise RasterError(f"malformed header line {line!r}")
        name = parts[0].lower()
        if name == "nodata":
            name = "nodata_value"
        if name not in _HEADER_KEYS or name in header:
            raise RasterError(f"unexpected header key {parts[0]!r}")
        header[name] = parts[1]
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        body = np.array(buf.read().split(), dtype=np.float64)
    except ValueError as exc:
        raise RasterError(str(exc)) from None
    if ncols < 1 or nrows < 1:
        raise RasterError("ncols and nrows must be positive")
    if body.size != ncols * nrows:
        raise RasterError(f"expected {ncols * nrows} values, found {body.size}")
    return Raster(body.reshape(nrows, ncols), float(header["xllcorner"]),
                  float(header["yllcorner"]), float(header["cellsize"]),
                  float(header["nodata_value"]))


def read(path) -> Raster:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def write(path, r: Raster) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(r))
