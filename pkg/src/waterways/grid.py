"""Geo-referenced raster grids shared by every pipeline stage.

Grids live in plain geographic degrees (lon/lat, WGS84 ellipsoid assumed but
never reprojected). The anchor is the top-left corner of the top-left cell,
row 0 is the northernmost row, and cells are square in degree units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Meters per degree of latitude under the equirectangular approximation.
DEGREE_METERS = 111_320.0

_OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_OFFSETS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


class GridAlignmentError(ValueError):
    """Raised when grids that must share a cell lattice do not."""


class MergeConflictError(ValueError):
    """Raised when overlapping tiles disagree on a valid cell value."""


@dataclass(frozen=True)
class GeoTransform:
    """Placement of a raster in degree space.

    ``origin_lon``/``origin_lat`` name the top-left corner of cell (0, 0);
    latitude decreases with increasing row index.
    """

    origin_lon: float
    origin_lat: float
    cell_size: float
    n_rows: int
    n_cols: int

    def __post_init__(self) -> None:
        if not (self.cell_size > 0):
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError(f"grid shape must be at least 1x1, got {self.n_rows}x{self.n_cols}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def pixel_to_geo(self, row: int, col: int) -> tuple[float, float]:
        """Return the (lon, lat) of the center of cell (row, col)."""
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise IndexError(f"cell ({row}, {col}) outside {self.n_rows}x{self.n_cols} grid")
        lon = self.origin_lon + (col + 0.5) * self.cell_size
        lat = self.origin_lat - (row + 0.5) * self.cell_size
        return lon, lat

    def geo_to_pixel(self, lon: float, lat: float) -> tuple[int, int] | None:
        """Return the cell whose footprint contains (lon, lat), or None if outside.

        Footprints are half-open: a point on the shared edge of two cells
        belongs to the cell south/east of the edge.
        """
        col = int(np.floor((lon - self.origin_lon) / self.cell_size))
        row = int(np.floor((self.origin_lat - lat) / self.cell_size))
        if 0 <= row < self.n_rows and 0 <= col < self.n_cols:
            return row, col
        return None

    def bounds(self) -> tuple[float, float, float, float]:
        """(lon_min, lat_min, lon_max, lat_max) of the raster footprint."""
        lon_max = self.origin_lon + self.n_cols * self.cell_size
        lat_min = self.origin_lat - self.n_rows * self.cell_size
        return self.origin_lon, lat_min, lon_max, self.origin_lat

    def center_latitude(self) -> float:
        return self.origin_lat - 0.5 * self.n_rows * self.cell_size

    def cell_size_meters(self) -> tuple[float, float]:
        """(east-west, north-south) cell extent in meters at the central latitude."""
        lat = self.center_latitude()
        ew = self.cell_size * DEGREE_METERS * float(np.cos(np.radians(lat)))
        ns = self.cell_size * DEGREE_METERS
        return ew, ns

    def same_lattice(self, other: "GeoTransform", tol: float = 1e-6) -> bool:
        """True when cell sizes match and origins differ by whole cells."""
        if abs(self.cell_size - other.cell_size) > 1e-12 * self.cell_size:
            return False
        for delta in (
            (other.origin_lon - self.origin_lon) / self.cell_size,
            (self.origin_lat - other.origin_lat) / self.cell_size,
        ):
            if abs(delta - round(delta)) > tol:
                return False
        return True

    def offset_of(self, other: "GeoTransform") -> tuple[int, int]:
        """Integer (row, col) of other's cell (0, 0) expressed on this lattice."""
        if not self.same_lattice(other):
            raise GridAlignmentError("grids do not share a cell lattice")
        col = round((other.origin_lon - self.origin_lon) / self.cell_size)
        row = round((self.origin_lat - other.origin_lat) / self.cell_size)
        return int(row), int(col)


@dataclass(frozen=True, eq=False)
class GeoGrid:
    """An immutable 2-D cell array bound to a GeoTransform.

    ``nodata`` is an exact sentinel value; cells equal to it carry no
    observation. Every other value must be finite.
    """

    transform: GeoTransform
    data: np.ndarray
    nodata: float | int | None = None

    def __post_init__(self) -> None:
        arr = np.array(self.data)
        if arr.ndim != 2:
            raise ValueError(f"grid data must be 2-D, got ndim={arr.ndim}")
        if arr.shape != self.transform.shape:
            raise ValueError(
                f"data shape {arr.shape} does not match transform shape {self.transform.shape}"
            )
        if np.issubdtype(arr.dtype, np.floating):
            finite = np.isfinite(arr)
            if self.nodata is not None:
                finite |= arr == self.nodata
            if not finite.all():
                raise ValueError("grid contains non-finite values outside the nodata sentinel")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.transform.shape

    def valid_mask(self) -> np.ndarray:
        if self.nodata is None:
            return np.ones(self.shape, dtype=bool)
        return self.data != self.nodata

    def valid_values(self) -> np.ndarray:
        return self.data[self.valid_mask()]

    def sample(self, lon: float, lat: float) -> float | None:
        """Value of the cell containing (lon, lat); None if outside or nodata."""
        cell = self.transform.geo_to_pixel(lon, lat)
        if cell is None:
            return None
        value = self.data[cell]
        if self.nodata is not None and value == self.nodata:
            return None
        return float(value)

    def with_data(self, data: np.ndarray, nodata: float | int | None = None) -> "GeoGrid":
        return GeoGrid(self.transform, data, nodata)


def require_binary(grid: GeoGrid, name: str = "mask") -> GeoGrid:
    """Validate that a grid is a strict 0/1 raster and return it."""
    values = np.unique(np.asarray(grid.data))
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values, found {values[:8]}")
    return grid


def require_same_transform(*grids: GeoGrid) -> GeoTransform:
    first = grids[0].transform
    for g in grids[1:]:
        if g.transform != first:
            raise GridAlignmentError(f"grids are not aligned: {g.transform} != {first}")
    return first


def neighbors(grid: GeoGrid, row: int, col: int, connectivity: int = 8) -> list[tuple[int, int]]:
    """In-bounds neighbor indices of a cell under 4- or 8-connectivity."""
    if connectivity == 8:
        offsets = _OFFSETS_8
    elif connectivity == 4:
        offsets = _OFFSETS_4
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    n_rows, n_cols = grid.shape
    if not (0 <= row < n_rows and 0 <= col < n_cols):
        raise IndexError(f"cell ({row}, {col}) outside {n_rows}x{n_cols} grid")
    out = []
    for dr, dc in offsets:
        r, c = row + dr, col + dc
        if 0 <= r < n_rows and 0 <= c < n_cols:
            out.append((r, c))
    return out


def _merge_sentinel(tiles: Sequence[GeoGrid], dtype: np.dtype) -> float | int:
    for t in tiles:
        if t.nodata is not None:
            return t.nodata
    return -9999 if np.issubdtype(dtype, np.integer) else -9999.0


def merge_tiles(tiles: Sequence[GeoGrid]) -> GeoGrid:
    """Merge lattice-aligned tiles into one grid.

    Overlapping valid cells must agree exactly; cells covered by no tile
    become nodata. The result does not depend on tile order.
    """
    if not tiles:
        raise ValueError("merge_tiles requires at least one tile")
    base = tiles[0].transform
    offsets = [base.offset_of(t.transform) for t in tiles]

    rows0 = min(off[0] for off in offsets)
    cols0 = min(off[1] for off in offsets)
    rows1 = max(off[0] + t.transform.n_rows for off, t in zip(offsets, tiles))
    cols1 = max(off[1] + t.transform.n_cols for off, t in zip(offsets, tiles))

    out_transform = GeoTransform(
        origin_lon=base.origin_lon + cols0 * base.cell_size,
        origin_lat=base.origin_lat - rows0 * base.cell_size,
        cell_size=base.cell_size,
        n_rows=rows1 - rows0,
        n_cols=cols1 - cols0,
    )
    dtype = np.result_type(*(t.data.dtype for t in tiles))
    sentinel = _merge_sentinel(tiles, dtype)

    out = np.full(out_transform.shape, sentinel, dtype=dtype)
    written = np.zeros(out_transform.shape, dtype=bool)
    for (r0, c0), tile in zip(offsets, tiles):
        r0, c0 = r0 - rows0, c0 - cols0
        window = (slice(r0, r0 + tile.transform.n_rows), slice(c0, c0 + tile.transform.n_cols))
        valid = tile.valid_mask()
        if np.any(tile.data[valid] == sentinel):
            raise ValueError(
                f"tile contains valid value equal to the merge nodata sentinel {sentinel}"
            )
        clash = valid & written[window] & (out[window] != tile.data)
        if clash.any():
            r, c = np.argwhere(clash)[0]
            raise MergeConflictError(
                f"tiles disagree at merged cell ({r0 + r}, {c0 + c}): "
                f"{out[window][r, c]} != {tile.data[r, c]}"
            )
        out[window][valid] = tile.data[valid]
        written[window] |= valid
    return GeoGrid(out_transform, out, nodata=sentinel)
