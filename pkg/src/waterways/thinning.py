"""Topology-preserving raster thinning guided by elevation.

Every foreground cell is in one of three states, decided entirely by its 3x3
neighborhood (cells beyond the grid border count as background):

* SKELETON: the cell has at most one foreground neighbor (8-connectivity), or
  deleting it would change the number of foreground 8-components within the
  neighborhood (a local cut cell).
* INTERIOR: not SKELETON, but deleting it would change the number of
  background 4-components within the neighborhood (it would open or merge a
  hole).
* REMOVABLE: everything else; deletion is locally topology-safe.

Removal always takes the highest-elevation removable cell first (ties by
row-major index), so ridges erode before valley bottoms and the surviving
skeleton settles into drainage lines. After each removal only the 8
neighbors are re-classified. Foreground stays 8-connected component for
component, background 4-components (holes) are preserved, and no 2x2
foreground block survives.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .grid import GeoGrid, require_binary, require_same_transform

_OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class CellState(IntEnum):
    SKELETON = 0
    INTERIOR = 1
    REMOVABLE = 2


def _patch_components(cells: set[tuple[int, int]], diagonal: bool) -> int:
    """Connected components among a set of 3x3-patch cells."""
    seen: set[tuple[int, int]] = set()
    parts = 0
    offsets = _OFFSETS_8 if diagonal else ((-1, 0), (0, -1), (0, 1), (1, 0))
    for start in cells:
        if start in seen:
            continue
        parts += 1
        stack = [start]
        seen.add(start)
        while stack:
            r, c = stack.pop()
            for dr, dc in offsets:
                nxt = (r + dr, c + dc)
                if nxt in cells and nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return parts


def _state_for_config(config: int) -> CellState:
    fg = {(dr, dc) for bit, (dr, dc) in enumerate(_OFFSETS_8) if config >> bit & 1}
    if len(fg) <= 1:
        return CellState.SKELETON
    if _patch_components(fg | {(0, 0)}, diagonal=True) != _patch_components(fg, diagonal=True):
        return CellState.SKELETON
    bg = {(dr, dc) for dr, dc in _OFFSETS_8 if (dr, dc) not in fg}
    if _patch_components(bg, diagonal=False) != _patch_components(bg | {(0, 0)}, diagonal=False):
        return CellState.INTERIOR
    return CellState.REMOVABLE


_STATE_TABLE = np.array([_state_for_config(c) for c in range(256)], dtype=np.uint8)


def _neighbor_config(arr: np.ndarray, row: int, col: int) -> int:
    n_rows, n_cols = arr.shape
    config = 0
    for bit, (dr, dc) in enumerate(_OFFSETS_8):
        r, c = row + dr, col + dc
        if 0 <= r < n_rows and 0 <= c < n_cols and arr[r, c]:
            config |= 1 << bit
    return config


def classify_cell(mask: GeoGrid, row: int, col: int) -> CellState:
    """State of one foreground cell of a binary mask."""
    require_binary(mask)
    arr = np.asarray(mask.data)
    if not arr[row, col]:
        raise ValueError(f"cell ({row}, {col}) is background")
    return CellState(_STATE_TABLE[_neighbor_config(arr, row, col)])


def _config_grid(arr: np.ndarray) -> np.ndarray:
    """Neighbor-bit configuration of every cell, vectorized."""
    padded = np.pad(arr, 1).astype(np.uint16)
    config = np.zeros(arr.shape, dtype=np.uint16)
    for bit, (dr, dc) in enumerate(_OFFSETS_8):
        config |= padded[1 + dr : 1 + dr + arr.shape[0], 1 + dc : 1 + dc + arr.shape[1]] << bit
    return config


@dataclass(frozen=True)
class ThinningResult:
    skeleton: GeoGrid
    removed: tuple[tuple[int, int], ...]
    removed_elevation: tuple[float, ...]
    stable_interior: int


def thin_trace(mask: GeoGrid, elevation: GeoGrid) -> ThinningResult:
    """Thin a binary mask, recording the removal sequence.

    The mask and elevation grids must be aligned, and elevation must be
    valid under every foreground cell. The INTERIOR state can in rare
    configurations never release a cell; such cells are retained and counted
    in ``stable_interior`` instead of looping.
    """
    require_binary(mask)
    require_same_transform(mask, elevation)
    arr = np.asarray(mask.data, dtype=np.uint8).copy()
    elev = np.asarray(elevation.data, dtype=np.float64)
    fg = arr == 1
    if elevation.nodata is not None and (elevation.data[fg] == elevation.nodata).any():
        raise ValueError("elevation is nodata under a foreground cell")

    n_rows, n_cols = arr.shape
    states = _STATE_TABLE[_config_grid(arr)]
    heap: list[tuple[float, int]] = []
    for row, col in zip(*np.nonzero(fg & (states == CellState.REMOVABLE))):
        heap.append((-elev[row, col], int(row) * n_cols + int(col)))
    heapq.heapify(heap)

    removed: list[tuple[int, int]] = []
    removed_elev: list[float] = []
    while heap:
        neg_elev, index = heapq.heappop(heap)
        row, col = divmod(index, n_cols)
        if not arr[row, col]:
            continue
        if _STATE_TABLE[_neighbor_config(arr, row, col)] != CellState.REMOVABLE:
            continue  # stale entry, the neighborhood changed since the push
        arr[row, col] = 0
        removed.append((row, col))
        removed_elev.append(-neg_elev)
        for dr, dc in _OFFSETS_8:
            r, c = row + dr, col + dc
            if 0 <= r < n_rows and 0 <= c < n_cols and arr[r, c]:
                if _STATE_TABLE[_neighbor_config(arr, r, c)] == CellState.REMOVABLE:
                    heapq.heappush(heap, (-elev[r, c], r * n_cols + c))

    states = _STATE_TABLE[_config_grid(arr)]
    stable_interior = int(((arr == 1) & (states == CellState.INTERIOR)).sum())
    skeleton = GeoGrid(mask.transform, arr)
    return ThinningResult(skeleton, tuple(removed), tuple(removed_elev), stable_interior)


def thin(mask: GeoGrid, elevation: GeoGrid) -> GeoGrid:
    """Thin a binary mask to an 8-connected skeleton along low elevation."""
    return thin_trace(mask, elevation).skeleton


def binarize(probability: GeoGrid, threshold: float = 0.5) -> GeoGrid:
    """Threshold a probability grid into a binary mask (>= threshold is 1)."""
    valid = probability.valid_mask()
    data = np.where(valid & (probability.data >= threshold), 1, 0).astype(np.uint8)
    return GeoGrid(probability.transform, data)
