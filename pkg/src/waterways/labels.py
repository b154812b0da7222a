"""Training label rasterization and per-class loss weighting.

Waterway types map to scalar weights with three roles: weight 0 marks
confirmed non-waterway surfaces (negative class), weights strictly between 0
and 1 mark unreliable classes excluded from the loss, and weights >= 1 mark
waterway classes whose loss contribution is scaled by the weight. Background
cells are negatives with weight 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GeoGrid, GeoTransform, require_binary, require_same_transform

# Default per-type weights. Key casing and spacing follow the upstream
# hydrography export they were tuned against.
DEFAULT_TYPE_WEIGHTS = {
    "playa": 0.0,
    "Inundation area": 0.0,
    "Swamp Intermittent": 0.5,
    "Swamp Perennial": 0.5,
    "Swamp": 0.5,
    "Reservoir": 0.5,
    "Lake Intermittent": 0.5,
    "Lake Perennial": 3.25,
    "Lake": 3.25,
    "spillway": 0.0,
    "drainage": 0.5,
    "wash": 1.5,
    "canal storm": 0.5,
    "canal aqua": 0.5,
    "canal": 0.5,
    "artificial path": 2.5,
    "Ephemeral Streams": 3.5,
    "Intermittent Streams": 3.75,
    "Perennial Streams": 3.25,
    "Streams Other": 3.25,
    "other": 0.5,
}

BCE_EPSILON = 1e-7

ROLE_NEGATIVE = "negative"
ROLE_MASKED = "masked"
ROLE_POSITIVE = "positive"


@dataclass(frozen=True)
class TypeWeightTable:
    """Waterway type -> loss weight, with stable 1-based integer codes."""

    weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TYPE_WEIGHTS))

    def __post_init__(self) -> None:
        for name, weight in self.weights.items():
            if not (weight >= 0) or not math.isfinite(weight):
                raise ValueError(f"weight for {name!r} must be finite and >= 0, got {weight}")

    @classmethod
    def from_config(cls, path: str | Path) -> "TypeWeightTable":
        """Load overrides from a flat ``name = weight`` config onto the defaults.

        Blank lines and ``#`` comments are ignored; names may contain spaces.
        """
        weights = dict(DEFAULT_TYPE_WEIGHTS)
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'name = weight', got {raw!r}")
            name, _, value = line.partition("=")
            try:
                weights[name.strip()] = float(value.strip())
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: bad weight {value.strip()!r}") from err
        return cls(weights)

    def weight(self, name: str) -> float:
        if name not in self.weights:
            raise KeyError(f"unknown waterway type {name!r}")
        return self.weights[name]

    def role(self, name: str) -> str:
        w = self.weight(name)
        if w == 0:
            return ROLE_NEGATIVE
        if w < 1:
            return ROLE_MASKED
        return ROLE_POSITIVE

    def codes(self) -> dict[str, int]:
        """Stable positive integer code per type, in table order."""
        return {name: i for i, name in enumerate(self.weights, start=1)}


@dataclass(frozen=True)
class LabelRaster:
    """Integer-coded waterway types on a grid; 0 is background."""

    grid: GeoGrid
    legend: dict[int, str]

    def __post_init__(self) -> None:
        labels = np.unique(np.asarray(self.grid.data))
        unknown = [int(v) for v in labels if v != 0 and int(v) not in self.legend]
        if unknown:
            raise ValueError(f"labels {unknown} missing from the legend")


def _pixel_xy(transform: GeoTransform, lon: float, lat: float) -> tuple[float, float]:
    """Continuous pixel coordinates: x along columns, y along rows (southward)."""
    x = (lon - transform.origin_lon) / transform.cell_size
    y = (transform.origin_lat - lat) / transform.cell_size
    return x, y


def _clip_segment(x0, y0, x1, y1, width, height):
    """Liang-Barsky clip to [0, width] x [0, height]; None when fully outside."""
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, x0 - 0.0),
        (dx, width - x0),
        (-dy, y0 - 0.0),
        (dy, height - y0),
    ):
        if p == 0:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            if t > t1:
                return None
            t0 = max(t0, t)
        else:
            if t < t0:
                return None
            t1 = min(t1, t)
    return (x0 + t0 * dx, y0 + t0 * dy, x0 + t1 * dx, y0 + t1 * dy)


def traverse_cells(x0: float, y0: float, x1: float, y1: float) -> list[tuple[int, int]]:
    """Every cell a segment passes through, in travel order (supercover walk).

    Coordinates are continuous pixel units; cell (r, c) spans [c, c+1) x
    [r, r+1). When the segment crosses a cell corner exactly, both cells
    sharing the crossed faces are included.
    """
    cx, cy = math.floor(x0), math.floor(y0)
    ex, ey = math.floor(x1), math.floor(y1)
    cells = [(cy, cx)]
    dx, dy = x1 - x0, y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    # Parametric distance to the next vertical / horizontal cell boundary.
    t_max_x = ((cx + (step_x > 0)) - x0) / dx if dx != 0 else math.inf
    t_max_y = ((cy + (step_y > 0)) - y0) / dy if dy != 0 else math.inf
    t_delta_x = abs(1.0 / dx) if dx != 0 else math.inf
    t_delta_y = abs(1.0 / dy) if dy != 0 else math.inf

    while (cx, cy) != (ex, ey):
        if t_max_x < t_max_y:
            cx += step_x
            t_max_x += t_delta_x
        elif t_max_y < t_max_x:
            cy += step_y
            t_max_y += t_delta_y
        else:
            # Corner crossing: include both face neighbors, then go diagonal.
            cells.append((cy, cx + step_x))
            cells.append((cy + step_y, cx))
            cx += step_x
            cy += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        cells.append((cy, cx))
        if len(cells) > 4 * (abs(ex - math.floor(x0)) + abs(ey - math.floor(y0)) + 2):
            raise RuntimeError("cell traversal failed to terminate")
    return cells


def _fill_ring(ring, transform: GeoTransform) -> list[tuple[int, int]]:
    """Cells whose centers lie inside the ring under the even-odd rule."""
    pts = [_pixel_xy(transform, lon, lat) for lon, lat in ring]
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    if len(pts) < 3:
        raise ValueError("polygon ring needs at least 3 distinct vertices")
    ys = [p[1] for p in pts]
    row_lo = max(0, math.floor(min(ys) - 0.5))
    row_hi = min(transform.n_rows - 1, math.ceil(max(ys)))
    cells = []
    for row in range(row_lo, row_hi + 1):
        y = row + 0.5
        crossings = []
        for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
            if (y0 <= y < y1) or (y1 <= y < y0):
                crossings.append(x0 + (y - y0) * (x1 - x0) / (y1 - y0))
        crossings.sort()
        for xa, xb in zip(crossings[::2], crossings[1::2]):
            col_lo = max(0, math.ceil(xa - 0.5))
            col_hi = min(transform.n_cols, math.ceil(xb - 0.5))
            for col in range(col_lo, col_hi):
                cells.append((row, col))
    return cells


def burn_vectors(
    lines,
    polygons,
    transform: GeoTransform,
    table: TypeWeightTable | None = None,
) -> LabelRaster:
    """Rasterize typed vector geometries onto a label grid.

    ``lines`` is a list of (coords, type_name) polylines in lon/lat order;
    ``polygons`` is a list of (ring, type_name). Polygons are burned first,
    then polylines, each list in order, so later geometries overwrite earlier
    ones on conflict. Polylines mark every cell the line passes through;
    polygons fill cells whose center is inside under the even-odd rule.
    """
    table = table or TypeWeightTable()
    codes = table.codes()
    data = np.zeros(transform.shape, dtype=np.int32)

    def code_for(type_name: str) -> int:
        if type_name not in codes:
            raise KeyError(f"unknown waterway type {type_name!r}")
        return codes[type_name]

    for ring, type_name in polygons:
        code = code_for(type_name)
        for row, col in _fill_ring(ring, transform):
            data[row, col] = code

    width, height = float(transform.n_cols), float(transform.n_rows)
    for coords, type_name in lines:
        code = code_for(type_name)
        if len(coords) < 2:
            raise ValueError("polyline needs at least 2 vertices")
        pix = [_pixel_xy(transform, lon, lat) for lon, lat in coords]
        for (x0, y0), (x1, y1) in zip(pix, pix[1:]):
            clipped = _clip_segment(x0, y0, x1, y1, width, height)
            if clipped is None:
                continue
            for row, col in traverse_cells(*clipped):
                if 0 <= row < transform.n_rows and 0 <= col < transform.n_cols:
                    data[row, col] = code

    legend = {code: name for name, code in codes.items()}
    used = {int(v) for v in np.unique(data) if v != 0}
    legend = {code: name for code, name in legend.items() if code in used}
    return LabelRaster(GeoGrid(transform, data), legend)


def weights_from_labels(labels: LabelRaster, table: TypeWeightTable) -> tuple[GeoGrid, GeoGrid]:
    """Expand a label raster into (target, weight) grids for the loss.

    Background and weight-0 types are negatives (target 0, weight 1); types
    with 0 < weight < 1 are masked out (weight 0); types with weight >= 1 are
    positives (target 1) keeping their weight.
    """
    data = labels.grid.data
    target = np.zeros(data.shape, dtype=np.int8)
    weight = np.ones(data.shape, dtype=np.float64)
    for code, name in labels.legend.items():
        w = table.weight(name)
        cells = data == code
        if w == 0:
            continue
        if w < 1:
            weight[cells] = 0.0
        else:
            target[cells] = 1
            weight[cells] = w
    return (
        GeoGrid(labels.grid.transform, target),
        GeoGrid(labels.grid.transform, weight),
    )


def weighted_bce(pred: GeoGrid, target: GeoGrid, weight: GeoGrid) -> float:
    """Weighted binary cross-entropy, averaged over cells with weight > 0.

    Predictions are clamped to [1e-7, 1 - 1e-7]. Cells with weight 0 never
    enter the sum, so their prediction values cannot influence the result.
    """
    require_same_transform(pred, target, weight)
    require_binary(target, "target")
    w = np.asarray(weight.data, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("weights must be >= 0")
    counted = w > 0
    n = int(counted.sum())
    if n == 0:
        raise ValueError("weighted_bce: every cell has weight 0")
    p = np.clip(pred.data[counted].astype(np.float64), BCE_EPSILON, 1.0 - BCE_EPSILON)
    t = target.data[counted].astype(np.float64)
    terms = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    return float((w[counted] * terms).sum() / n)
