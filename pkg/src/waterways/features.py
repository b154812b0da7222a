"""Model input channels derived from composited imagery and elevation.

The canonical stack is ten channels: the four transformed reflectance bands
(near-infrared, red, green, blue), two spectral indices, and four elevation
derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GeoGrid, GeoTransform, require_same_transform

SIGMOID_SLOPE = 0.6

CHANNEL_NAMES = (
    "nir_t",
    "red_t",
    "green_t",
    "blue_t",
    "ndvi",
    "ndwi",
    "elev_shift",
    "elev_dx",
    "elev_dy",
    "elev_grad",
)

_INDEX_NODATA = -9999.0


def round_half_away(values):
    """Round to nearest integer, halves away from zero."""
    arr = np.asarray(values)
    return np.sign(arr) * np.floor(np.abs(arr) + 0.5)


def sigmoid_transform(x):
    """Squash real values into 8-bit integers via round(255 / (1 + e^(-0.6 x))).

    Scalars map to int; arrays map to a uint8 array. The logistic midpoint
    lands on 128 because halves round away from zero.
    """
    arr = np.asarray(x, dtype=np.float64)
    squashed = 255.0 / (1.0 + np.exp(-SIGMOID_SLOPE * arr))
    out = round_half_away(squashed).astype(np.uint8)
    if np.isscalar(x) or arr.ndim == 0:
        return int(out)
    return out


def normalize_channel(grid: GeoGrid) -> GeoGrid:
    """Z-score a channel over its valid cells (population standard deviation)."""
    valid = grid.valid_mask()
    values = grid.data[valid].astype(np.float64)
    if values.size < 2:
        raise ValueError("normalize_channel needs at least 2 valid cells")
    mean = float(values.mean())
    sd = float(values.std())
    if sd == 0.0:
        raise ValueError("normalize_channel: channel is constant (zero standard deviation)")
    out = np.full(grid.shape, _INDEX_NODATA, dtype=np.float64)
    out[valid] = (grid.data[valid] - mean) / sd
    nodata = _INDEX_NODATA if grid.nodata is not None else None
    return GeoGrid(grid.transform, out, nodata=nodata)


def _band_ratio(a: GeoGrid, b: GeoGrid) -> GeoGrid:
    """(a - b) / (a + b) with zero-sum cells mapped to 0."""
    require_same_transform(a, b)
    valid = a.valid_mask() & b.valid_mask()
    av = a.data.astype(np.float64)
    bv = b.data.astype(np.float64)
    total = av + bv
    out = np.full(a.shape, _INDEX_NODATA, dtype=np.float64)
    safe = valid & (total != 0)
    out[safe] = (av[safe] - bv[safe]) / total[safe]
    out[valid & (total == 0)] = 0.0
    nodata = _INDEX_NODATA if (a.nodata is not None or b.nodata is not None) else None
    return GeoGrid(a.transform, out, nodata=nodata)


def ndvi(nir: GeoGrid, red: GeoGrid) -> GeoGrid:
    """Normalized difference vegetation index, (NIR - red) / (NIR + red)."""
    return _band_ratio(nir, red)


def ndwi(green: GeoGrid, nir: GeoGrid) -> GeoGrid:
    """Normalized difference water index, (green - NIR) / (green + NIR)."""
    return _band_ratio(green, nir)


def elevation_channels(elevation: GeoGrid) -> tuple[GeoGrid, GeoGrid, GeoGrid, GeoGrid]:
    """Shifted elevation plus finite-difference slope channels.

    Returns (elev_shift, elev_dx, elev_dy, elev_grad): elevation above its
    valid minimum, the central-difference derivative along columns and along
    rows (one-sided at grid borders, per-cell units), and the gradient
    magnitude. Cells whose difference stencil touches nodata become nodata.
    """
    if elevation.transform.n_rows < 2 or elevation.transform.n_cols < 2:
        raise ValueError("elevation_channels needs at least a 2x2 grid")
    valid = elevation.valid_mask()
    if not valid.any():
        raise ValueError("elevation grid has no valid cells")
    data = elevation.data.astype(np.float64)

    shifted = np.where(valid, data - data[valid].min(), _INDEX_NODATA)

    dx = np.gradient(data, axis=1)
    dy = np.gradient(data, axis=0)

    invalid = ~valid
    stencil_x = invalid.copy()
    stencil_x[:, :-1] |= invalid[:, 1:]
    stencil_x[:, 1:] |= invalid[:, :-1]
    stencil_y = invalid.copy()
    stencil_y[:-1, :] |= invalid[1:, :]
    stencil_y[1:, :] |= invalid[:-1, :]

    dx[stencil_x] = _INDEX_NODATA
    dy[stencil_y] = _INDEX_NODATA
    grad = np.hypot(np.where(stencil_x, 0.0, dx), np.where(stencil_y, 0.0, dy))
    grad[stencil_x | stencil_y] = _INDEX_NODATA

    nodata = _INDEX_NODATA if elevation.nodata is not None else None
    t = elevation.transform
    return (
        GeoGrid(t, shifted, nodata=nodata),
        GeoGrid(t, dx, nodata=nodata),
        GeoGrid(t, dy, nodata=nodata),
        GeoGrid(t, grad, nodata=nodata),
    )


def resample_nearest(source: GeoGrid, target: GeoTransform) -> GeoGrid:
    """Sample a grid at every target cell center (nearest neighbor).

    Every target center must fall inside the source footprint.
    """
    rows = np.arange(target.n_rows)
    cols = np.arange(target.n_cols)
    center_lat = target.origin_lat - (rows + 0.5) * target.cell_size
    center_lon = target.origin_lon + (cols + 0.5) * target.cell_size
    src = source.transform
    src_rows = np.floor((src.origin_lat - center_lat) / src.cell_size).astype(np.int64)
    src_cols = np.floor((center_lon - src.origin_lon) / src.cell_size).astype(np.int64)
    if (
        src_rows.min() < 0
        or src_rows.max() >= src.n_rows
        or src_cols.min() < 0
        or src_cols.max() >= src.n_cols
    ):
        raise ValueError("target grid extends beyond the source footprint")
    data = source.data[np.ix_(src_rows, src_cols)]
    return GeoGrid(target, data, nodata=source.nodata)


@dataclass(frozen=True)
class ChannelStack:
    """The ten model input channels on one shared grid, in canonical order."""

    transform: GeoTransform
    channels: tuple[GeoGrid, ...]

    def __post_init__(self) -> None:
        if len(self.channels) != len(CHANNEL_NAMES):
            raise ValueError(f"expected {len(CHANNEL_NAMES)} channels, got {len(self.channels)}")
        for grid in self.channels:
            if grid.transform != self.transform:
                raise ValueError("all stack channels must share one transform")

    def channel(self, name: str) -> GeoGrid:
        return self.channels[CHANNEL_NAMES.index(name)]


def assemble_stack(nrgb_t: tuple[GeoGrid, GeoGrid, GeoGrid, GeoGrid], elevation: GeoGrid) -> ChannelStack:
    """Build the canonical 10-channel stack from transformed bands and elevation.

    The spectral indices are computed from the band values as supplied; the
    elevation raster is resampled to the imagery lattice by nearest neighbor
    before the slope channels are derived.
    """
    if len(nrgb_t) != 4:
        raise ValueError(f"expected 4 reflectance channels, got {len(nrgb_t)}")
    transform = require_same_transform(*nrgb_t)
    nir, red, green, _blue = nrgb_t
    elev = elevation if elevation.transform == transform else resample_nearest(elevation, transform)
    shifted, dx, dy, grad = elevation_channels(elev)
    channels = (*nrgb_t, ndvi(nir, red), ndwi(green, nir), shifted, dx, dy, grad)
    return ChannelStack(transform, channels)
