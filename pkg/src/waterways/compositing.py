"""Cloud-free compositing of multi-date satellite tiles.

Tiles carry four reflectance channels plus an invalid-observation mask
(clouds, snow, missing scan lines). The composite greedily accepts tiles,
cleanest first by marginal coverage, until the uncovered fraction drops to
the threshold. Accepted tiles contribute per-tile normalized and squashed
8-bit values everywhere outside a metric buffer around their invalid cells,
and overlapping contributions are averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np
from scipy import ndimage

from .ascii_grid import read_ascii_grid
from .features import round_half_away, sigmoid_transform
from .grid import DEGREE_METERS, GeoGrid, GeoTransform, require_binary, require_same_transform

CLOUD_THRESHOLD = 0.01
BUFFER_METERS = 500.0

CHANNEL_ORDER = ("nir", "red", "green", "blue")

COMPOSITE_NODATA = -1


@dataclass(frozen=True)
class SceneTile:
    """One acquisition: four aligned reflectance grids and an invalid mask."""

    acquisition_id: str
    channels: tuple[GeoGrid, GeoGrid, GeoGrid, GeoGrid]
    invalid_mask: GeoGrid

    def __post_init__(self) -> None:
        require_same_transform(*self.channels, self.invalid_mask)
        require_binary(self.invalid_mask, "invalid_mask")

    @property
    def transform(self) -> GeoTransform:
        return self.invalid_mask.transform


def cloud_fraction(tile: SceneTile) -> float:
    """Fraction of tile cells flagged invalid."""
    return float(np.asarray(tile.invalid_mask.data).mean())


def buffer_radius_cells(transform: GeoTransform, radius_m: float) -> int:
    """Metric buffer radius expressed in whole cells.

    The cell edge in meters uses the equirectangular scale at the tile's
    central latitude; the smaller of the east-west and north-south edges is
    used so the buffer covers at least radius_m in every direction. A small
    epsilon absorbs float noise so e.g. 500 m at 10 m cells is exactly 50.
    """
    if radius_m < 0:
        raise ValueError(f"buffer radius must be >= 0, got {radius_m}")
    if radius_m == 0:
        return 0
    ew, ns = transform.cell_size_meters()
    cell_m = min(ew, ns)
    if cell_m <= 0:
        raise ValueError("cell size collapses to zero meters at this latitude")
    return int(math.ceil(radius_m / cell_m - 1e-9))


def dilate_disc(mask: np.ndarray, radius_cells: int) -> np.ndarray:
    """Binary dilation by a Euclidean disc of the given pixel radius."""
    mask = np.asarray(mask, dtype=bool)
    if radius_cells <= 0 or not mask.any():
        return mask.copy()
    distance = ndimage.distance_transform_edt(~mask)
    return distance <= radius_cells + 1e-9


def buffer_invalid(mask: GeoGrid, radius_m: float) -> GeoGrid:
    """Grow an invalid mask by a metric radius (Euclidean, in cells)."""
    require_binary(mask, "invalid_mask")
    radius = buffer_radius_cells(mask.transform, radius_m)
    grown = dilate_disc(np.asarray(mask.data, dtype=bool), radius)
    return GeoGrid(mask.transform, grown.astype(np.uint8))


class TileProvider(Protocol):
    """Source of candidate tiles for a bounding box."""

    def candidates(self, bbox: tuple[float, float, float, float]) -> list[str]:
        """Tile ids intersecting the bbox, ascending by cloud fraction."""
        ...

    def fetch(self, tile_id: str) -> SceneTile:
        ...


class ManifestTileProvider:
    """Directory-backed provider reading a plain-text manifest.

    Each non-comment line names one tile::

        <id> <nir.asc> <red.asc> <green.asc> <blue.asc> <invalid_mask.asc>

    Paths are resolved relative to the manifest file. Candidates are ordered
    by ascending cloud fraction, ties by manifest order.
    """

    def __init__(self, manifest_path: str | Path) -> None:
        self.manifest_path = Path(manifest_path)
        self._paths: dict[str, list[Path]] = {}
        self._order: list[str] = []
        self._cache: dict[str, SceneTile] = {}
        root = self.manifest_path.parent
        for lineno, raw in enumerate(self.manifest_path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(
                    f"{manifest_path}:{lineno}: expected 'id nir red green blue mask', got {raw!r}"
                )
            tile_id = parts[0]
            if tile_id in self._paths:
                raise ValueError(f"{manifest_path}:{lineno}: duplicate tile id {tile_id!r}")
            self._paths[tile_id] = [root / p for p in parts[1:]]
            self._order.append(tile_id)

    def fetch(self, tile_id: str) -> SceneTile:
        if tile_id not in self._paths:
            raise KeyError(f"unknown tile id {tile_id!r}")
        if tile_id not in self._cache:
            paths = self._paths[tile_id]
            channels = tuple(read_ascii_grid(p) for p in paths[:4])
            mask = read_ascii_grid(paths[4])
            self._cache[tile_id] = SceneTile(tile_id, channels, mask)
        return self._cache[tile_id]

    def candidates(self, bbox: tuple[float, float, float, float]) -> list[str]:
        lon_min, lat_min, lon_max, lat_max = bbox
        ranked = []
        for position, tile_id in enumerate(self._order):
            tile = self.fetch(tile_id)
            t_lon_min, t_lat_min, t_lon_max, t_lat_max = tile.transform.bounds()
            if t_lon_max <= lon_min or t_lon_min >= lon_max:
                continue
            if t_lat_max <= lat_min or t_lat_min >= lat_max:
                continue
            ranked.append((cloud_fraction(tile), position, tile_id))
        ranked.sort()
        return [tile_id for _, _, tile_id in ranked]


@dataclass(frozen=True)
class TileContribution:
    """Cells one accepted tile contributed, for audit and tests."""

    acquisition_id: str
    cells: np.ndarray
    buffered_invalid: np.ndarray


@dataclass(frozen=True)
class CompositeResult:
    """8-bit composite channels plus the coverage flag grid.

    ``coverage`` is 1 where at least one tile contributed; channel cells
    outside coverage hold the nodata sentinel.
    """

    channels: tuple[GeoGrid, GeoGrid, GeoGrid, GeoGrid]
    coverage: GeoGrid
    uncovered_fraction: float
    contributions: tuple[TileContribution, ...]

    @property
    def transform(self) -> GeoTransform:
        return self.coverage.transform


def _output_transform(anchor: GeoTransform, bbox) -> GeoTransform:
    lon_min, lat_min, lon_max, lat_max = bbox
    if not (lon_max > lon_min and lat_max > lat_min):
        raise ValueError(f"empty bounding box {bbox}")
    cell = anchor.cell_size
    eps = 1e-9
    col0 = math.floor((lon_min - anchor.origin_lon) / cell + eps)
    col1 = math.ceil((lon_max - anchor.origin_lon) / cell - eps)
    row0 = math.floor((anchor.origin_lat - lat_max) / cell + eps)
    row1 = math.ceil((anchor.origin_lat - lat_min) / cell - eps)
    return GeoTransform(
        origin_lon=anchor.origin_lon + col0 * cell,
        origin_lat=anchor.origin_lat - row0 * cell,
        cell_size=cell,
        n_rows=row1 - row0,
        n_cols=col1 - col0,
    )


def _transformed_channels(tile: SceneTile, valid: np.ndarray) -> list[np.ndarray]:
    """Per-tile z-score over valid cells, then 8-bit logistic squash."""
    out = []
    for channel in tile.channels:
        values = channel.data[valid].astype(np.float64)
        if values.size < 2:
            raise ValueError(f"tile {tile.acquisition_id}: fewer than 2 valid cells")
        sd = float(values.std())
        if sd == 0.0:
            raise ValueError(f"tile {tile.acquisition_id}: constant channel cannot be normalized")
        z = np.zeros(channel.data.shape, dtype=np.float64)
        z[valid] = (values - values.mean()) / sd
        out.append(sigmoid_transform(z).astype(np.float64))
    return out


def greedy_composite(
    provider: TileProvider,
    bbox: tuple[float, float, float, float],
    cloud_threshold: float = CLOUD_THRESHOLD,
    buffer_m: float = BUFFER_METERS,
) -> CompositeResult:
    """Assemble a cloud-free composite over a bounding box.

    Tiles are accepted one at a time, each time picking the candidate that
    minimizes the remaining uncovered-cell count (ties go to the candidate
    enumerated earlier, i.e. lower cloud fraction). Acceptance stops once the
    uncovered fraction is at or below ``cloud_threshold``, candidates run
    out, or no candidate covers a new cell. Each accepted tile contributes
    only cells outside its buffered invalid mask; overlapping contributions
    are averaged and rounded back to 8 bits.
    """
    ids = provider.candidates(bbox)
    if not ids:
        raise ValueError(f"no candidate tiles intersect bbox {bbox}")
    tiles = [provider.fetch(tile_id) for tile_id in ids]
    anchor = tiles[0].transform
    out_t = _output_transform(anchor, bbox)

    # Per-candidate contribution footprint on the output grid.
    footprints: list[np.ndarray] = []
    buffered_masks: list[np.ndarray] = []
    windows: list[tuple[slice, slice] | None] = []
    for tile in tiles:
        row0, col0 = out_t.offset_of(tile.transform)
        buffered = np.asarray(buffer_invalid(tile.invalid_mask, buffer_m).data, dtype=bool)
        fp = np.zeros(out_t.shape, dtype=bool)
        bf = np.zeros(out_t.shape, dtype=bool)
        r_lo, r_hi = max(0, row0), min(out_t.n_rows, row0 + tile.transform.n_rows)
        c_lo, c_hi = max(0, col0), min(out_t.n_cols, col0 + tile.transform.n_cols)
        if r_lo < r_hi and c_lo < c_hi:
            window = (slice(r_lo, r_hi), slice(c_lo, c_hi))
            tile_window = (
                slice(r_lo - row0, r_hi - row0),
                slice(c_lo - col0, c_hi - col0),
            )
            fp[window] = ~buffered[tile_window]
            bf[window] = buffered[tile_window]
            windows.append(tile_window)
        else:
            windows.append(None)
        footprints.append(fp)
        buffered_masks.append(bf)

    total = out_t.n_rows * out_t.n_cols
    covered = np.zeros(out_t.shape, dtype=bool)
    sums = [np.zeros(out_t.shape, dtype=np.float64) for _ in CHANNEL_ORDER]
    counts = np.zeros(out_t.shape, dtype=np.int64)
    remaining = list(range(len(tiles)))
    contributions: list[TileContribution] = []

    while remaining:
        uncovered = total - int(covered.sum())
        if uncovered / total <= cloud_threshold:
            break
        best_pos = None
        best_residual = None
        for pos in remaining:
            residual = uncovered - int((footprints[pos] & ~covered).sum())
            if best_residual is None or residual < best_residual:
                best_pos, best_residual = pos, residual
        if best_residual >= uncovered:
            break  # nothing left can cover a new cell
        remaining.remove(best_pos)

        tile = tiles[best_pos]
        fp = footprints[best_pos]
        tile_window = windows[best_pos]
        row0, col0 = out_t.offset_of(tile.transform)
        valid = ~np.asarray(tile.invalid_mask.data, dtype=bool)
        transformed = _transformed_channels(tile, valid)
        out_window = (
            slice(tile_window[0].start + row0, tile_window[0].stop + row0),
            slice(tile_window[1].start + col0, tile_window[1].stop + col0),
        )
        contribute = fp[out_window]
        for sum_arr, values in zip(sums, transformed):
            window_sum = sum_arr[out_window]
            window_sum[contribute] += values[tile_window][contribute]
            sum_arr[out_window] = window_sum
        window_counts = counts[out_window]
        window_counts[contribute] += 1
        counts[out_window] = window_counts
        covered |= fp
        fp_frozen = fp.copy()
        fp_frozen.setflags(write=False)
        bf_frozen = buffered_masks[best_pos].copy()
        bf_frozen.setflags(write=False)
        contributions.append(TileContribution(tile.acquisition_id, fp_frozen, bf_frozen))

    channels = []
    for sum_arr in sums:
        values = np.full(out_t.shape, COMPOSITE_NODATA, dtype=np.int32)
        has = counts > 0
        values[has] = round_half_away(sum_arr[has] / counts[has]).astype(np.int32)
        channels.append(GeoGrid(out_t, values, nodata=COMPOSITE_NODATA))
    coverage = GeoGrid(out_t, covered.astype(np.uint8))
    uncovered_fraction = 1.0 - float(covered.sum()) / total
    return CompositeResult(tuple(channels), coverage, uncovered_fraction, tuple(contributions))
