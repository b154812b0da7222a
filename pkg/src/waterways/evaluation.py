"""Distance-based evaluation of predicted waterways against references.

Distances are computed in plain degree space (the working metric) and
reported in meters through the equirectangular scale at the query point's
latitude: east-west degrees shrink by cos(lat), one degree of latitude is
111,320 m. A uniform bucket grid accelerates nearest-distance queries; the
expanding ring search never stops before every bucket that could hold a
closer segment has been examined, so results match brute force exactly.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import DEGREE_METERS
from .stream_order import ORDER_CATEGORIES
from .vectorize import Point

DEFAULT_REQUEST_THRESHOLD = 0.002

QUANTILE_LEVELS = tuple(range(5, 100, 5)) + (99,)

SUMMARY_COLUMNS = (("O1", "1"), ("O2", "2"), ("O3plus", "3"), ("all", "all"))

Polyline = tuple[Point, ...]


def _segment_dist2(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> float:
    """Squared distance from point to segment, all in one planar frame."""
    dx, dy = bx - ax, by - ay
    length2 = dx * dx + dy * dy
    if length2 == 0.0:
        ex, ey = px - ax, py - ay
        return ex * ex + ey * ey
    t = ((px - ax) * dx + (py - ay) * dy) / length2
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    ex, ey = px - (ax + t * dx), py - (ay + t * dy)
    return ex * ex + ey * ey


def point_to_polyline_distance(point: Point, polyline: Sequence[Point]) -> tuple[float, float]:
    """(degrees, meters) from a point to a polyline.

    Both values minimize over the polyline's segments, the meter value in
    the scaled frame, so the two minima may come from different segments.
    """
    if len(polyline) == 0:
        raise ValueError("polyline has no points")
    px, py = point
    k = math.cos(math.radians(py))
    best_deg2 = math.inf
    best_m2 = math.inf
    pairs = zip(polyline, polyline[1:]) if len(polyline) > 1 else [(polyline[0], polyline[0])]
    for (ax, ay), (bx, by) in pairs:
        best_deg2 = min(best_deg2, _segment_dist2(px, py, ax, ay, bx, by))
        best_m2 = min(
            best_m2,
            _segment_dist2(
                px * k, py, ax * k, ay, bx * k, by
            ),
        )
    return math.sqrt(best_deg2), DEGREE_METERS * math.sqrt(best_m2)


class ReferenceIndex:
    """Uniform bucket grid over reference polyline segments.

    Each segment lands in every bucket its bounding box touches; queries
    expand outward ring by ring and only stop once the unexplored rings are
    provably farther than the best hit so far.
    """

    def __init__(self, polylines: Sequence[Polyline], bucket_size: float = DEFAULT_REQUEST_THRESHOLD):
        if not polylines:
            raise ValueError("reference index needs at least one polyline")
        if not (bucket_size > 0):
            raise ValueError(f"bucket size must be positive, got {bucket_size}")
        self.bucket_size = float(bucket_size)
        self.polylines = tuple(tuple((float(x), float(y)) for x, y in line) for line in polylines)
        self._buckets: dict[tuple[int, int], list[tuple[float, float, float, float]]] = {}
        for line in self.polylines:
            if len(line) == 0:
                raise ValueError("reference polyline has no points")
            pairs = zip(line, line[1:]) if len(line) > 1 else [(line[0], line[0])]
            for (ax, ay), (bx, by) in pairs:
                i_lo = math.floor(min(ax, bx) / bucket_size)
                i_hi = math.floor(max(ax, bx) / bucket_size)
                j_lo = math.floor(min(ay, by) / bucket_size)
                j_hi = math.floor(max(ay, by) / bucket_size)
                for i in range(i_lo, i_hi + 1):
                    for j in range(j_lo, j_hi + 1):
                        self._buckets.setdefault((i, j), []).append((ax, ay, bx, by))
        keys = list(self._buckets)
        self._key_min = (min(k[0] for k in keys), min(k[1] for k in keys))
        self._key_max = (max(k[0] for k in keys), max(k[1] for k in keys))

    def _ring_keys(self, center: tuple[int, int], ring: int) -> Iterable[tuple[int, int]]:
        ci, cj = center
        if ring == 0:
            yield (ci, cj)
            return
        for i in range(ci - ring, ci + ring + 1):
            yield (i, cj - ring)
            yield (i, cj + ring)
        for j in range(cj - ring + 1, cj + ring):
            yield (ci - ring, j)
            yield (ci + ring, j)

    def nearest(self, point: Point, metric: str = "degrees") -> float:
        """Exact nearest distance from the point to any indexed segment."""
        px, py = float(point[0]), float(point[1])
        if metric == "degrees":
            scale = 1.0

            def dist2(ax, ay, bx, by):
                return _segment_dist2(px, py, ax, ay, bx, by)

        elif metric == "meters":
            k = math.cos(math.radians(py))
            scale = DEGREE_METERS * k  # lower bound on meters per degree offset

            def dist2(ax, ay, bx, by):
                return _segment_dist2(px * k, py, ax * k, ay, bx * k, by) * DEGREE_METERS**2

        else:
            raise ValueError(f"metric must be 'degrees' or 'meters', got {metric!r}")

        bs = self.bucket_size
        center = (math.floor(px / bs), math.floor(py / bs))
        max_ring = max(
            abs(center[0] - self._key_min[0]),
            abs(center[0] - self._key_max[0]),
            abs(center[1] - self._key_min[1]),
            abs(center[1] - self._key_max[1]),
        )
        best2 = math.inf
        # Rings nearer than the occupied-bucket bounding box are empty, so the
        # walk starts at the first ring that can intersect the box.
        ring = max(
            0,
            self._key_min[0] - center[0],
            center[0] - self._key_max[0],
            self._key_min[1] - center[1],
            center[1] - self._key_max[1],
        )
        while ring <= max_ring:
            # Any segment in an unexplored ring is at least (ring-1) whole
            # buckets away in degrees; once that exceeds the best hit, stop.
            if best2 < math.inf and ring >= 1:
                bound = (ring - 1) * bs * scale
                if bound > 0 and bound * bound > best2:
                    break
            for key in self._ring_keys(center, ring):
                for ax, ay, bx, by in self._buckets.get(key, ()):
                    d2 = dist2(ax, ay, bx, by)
                    if d2 < best2:
                        best2 = d2
            ring += 1
        return math.sqrt(best2)


def nearest_reference_distance(point: Point, index: ReferenceIndex) -> float:
    """Nearest distance in degrees from a point to the indexed references."""
    return index.nearest(point, metric="degrees")


def nearest_distances(
    points: Sequence[Point],
    index: ReferenceIndex,
    metric: str = "degrees",
    jobs: int = 1,
) -> list[float]:
    """Nearest distances for many points; order follows the input."""
    if jobs <= 1 or len(points) < 2:
        return [index.nearest(p, metric) for p in points]
    chunks = np.array_split(np.arange(len(points)), min(jobs, len(points)))
    out: list[float] = [0.0] * len(points)

    def work(idx_chunk) -> None:
        for i in idx_chunk:
            out[i] = index.nearest(points[i], metric)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        list(pool.map(work, chunks))
    return out


def hit_rate(
    points: Sequence[tuple[Point, str]],
    index: ReferenceIndex,
    threshold: float,
    jobs: int = 1,
) -> dict[str, tuple[int, int]]:
    """(hits, total) per order category and overall, hit = distance < threshold."""
    if not points:
        raise ValueError("hit_rate needs at least one point")
    for _, category in points:
        if category not in ORDER_CATEGORIES:
            raise ValueError(f"unknown order category {category!r}")
    distances = nearest_distances([p for p, _ in points], index, "degrees", jobs)
    result: dict[str, tuple[int, int]] = {}
    for category in (*ORDER_CATEGORIES, "all"):
        members = [
            d for d, (_, cat) in zip(distances, points) if category == "all" or cat == category
        ]
        if members:
            hits = sum(1 for d in members if d < threshold)
            result[category] = (hits, len(members))
    return result


@dataclass(frozen=True)
class RequestPoint:
    """One location-request row: where a user asked for water information."""

    lon: float
    lat: float
    country: str
    service: str | None = None


def load_requests_csv(path: str | Path) -> list[RequestPoint]:
    """Read request points from CSV with required header lon,lat,country."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        required = ("lon", "lat", "country")
        missing = [c for c in required if c not in fields]
        if missing:
            raise ValueError(f"{path}: request CSV is missing columns {missing}")
        extra = [c for c in fields if c not in (*required, "service")]
        if extra:
            raise ValueError(f"{path}: request CSV has unsupported columns {extra}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    RequestPoint(
                        float(row["lon"]),
                        float(row["lat"]),
                        row["country"].strip(),
                        (row.get("service") or "").strip() or None,
                    )
                )
            except (TypeError, ValueError) as err:
                raise ValueError(f"{path}:{lineno}: bad request row {row}") from err
    if not rows:
        raise ValueError(f"{path}: request CSV has no data rows")
    return rows


def recall_requests(
    requests: Sequence[RequestPoint],
    polylines: Sequence[Polyline],
    threshold: float = DEFAULT_REQUEST_THRESHOLD,
    jobs: int = 1,
) -> dict[str, tuple[int, int]]:
    """Per-country (captured, total) for request points near any waterway.

    A request is captured when its nearest waterway polyline lies strictly
    within the threshold (degrees). Full polyline geometries are used, not
    just their inner points.
    """
    if not requests:
        raise ValueError("recall_requests needs at least one request")
    index = ReferenceIndex(polylines, bucket_size=threshold)
    distances = nearest_distances([(r.lon, r.lat) for r in requests], index, "degrees", jobs)
    result: dict[str, tuple[int, int]] = {}
    for request, distance in zip(requests, distances):
        captured, total = result.get(request.country, (0, 0))
        result[request.country] = (captured + (1 if distance < threshold else 0), total + 1)
    return result


@dataclass(frozen=True)
class CategoryStats:
    count: int
    mean: float
    sd: float
    minimum: float
    quantiles: tuple[float, ...]  # QUANTILE_LEVELS order
    maximum: float


@dataclass(frozen=True)
class DistanceSummary:
    """Distance statistics (meters) per order category plus overall."""

    categories: dict[str, CategoryStats]

    def to_rows(self) -> list[list[str]]:
        """Table layout: categories as columns, statistics as rows."""
        header = ["Stream Order"] + [label for _, label in SUMMARY_COLUMNS]
        rows = [header]

        def cell(category: str, pick) -> str:
            stats = self.categories.get(category)
            if stats is None:
                return ""
            return pick(stats)

        rows.append(["Count"] + [cell(c, lambda s: str(s.count)) for c, _ in SUMMARY_COLUMNS])
        rows.append(["Mean"] + [cell(c, lambda s: f"{s.mean:.2f}") for c, _ in SUMMARY_COLUMNS])
        rows.append(["SD"] + [cell(c, lambda s: f"{s.sd:.2f}") for c, _ in SUMMARY_COLUMNS])
        rows.append(["Min"] + [cell(c, lambda s: f"{s.minimum:.2f}") for c, _ in SUMMARY_COLUMNS])
        for pos, level in enumerate(QUANTILE_LEVELS):
            rows.append(
                [f"{level}%"]
                + [cell(c, lambda s, p=pos: f"{s.quantiles[p]:.2f}") for c, _ in SUMMARY_COLUMNS]
            )
        rows.append(["Max"] + [cell(c, lambda s: f"{s.maximum:.2f}") for c, _ in SUMMARY_COLUMNS])
        return rows


def _stats(values: np.ndarray) -> CategoryStats:
    quantiles = np.percentile(values, QUANTILE_LEVELS, method="linear")
    return CategoryStats(
        count=int(values.size),
        mean=float(values.mean()),
        sd=float(values.std()),
        minimum=float(values.min()),
        quantiles=tuple(float(q) for q in quantiles),
        maximum=float(values.max()),
    )


def distance_summary(
    points: Sequence[tuple[Point, str]],
    index: ReferenceIndex,
    jobs: int = 1,
) -> DistanceSummary:
    """Summarize nearest distances in meters per order category and overall.

    Quantiles interpolate linearly between order statistics; SD is the
    population standard deviation.
    """
    if not points:
        raise ValueError("distance_summary needs at least one point")
    for _, category in points:
        if category not in ORDER_CATEGORIES:
            raise ValueError(f"unknown order category {category!r}")
    distances = np.array(nearest_distances([p for p, _ in points], index, "meters", jobs))
    categories: dict[str, CategoryStats] = {}
    labels = np.array([cat for _, cat in points])
    for category in ORDER_CATEGORIES:
        members = distances[labels == category]
        if members.size:
            categories[category] = _stats(members)
    categories["all"] = _stats(distances)
    return DistanceSummary(categories)


def write_summary_csv(summary: DistanceSummary, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        csv.writer(handle).writerows(summary.to_rows())


def load_polylines_geojson(doc: dict) -> list[Polyline]:
    """Extract polyline geometries from a GeoJSON FeatureCollection.

    LineStrings are taken whole, MultiLineStrings are flattened, Points
    (degraded single-cell features) are skipped.
    """
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    lines: list[Polyline] = []
    for feature in doc.get("features", []):
        geometry = feature.get("geometry", {})
        kind = geometry.get("type")
        if kind == "LineString":
            lines.append(tuple(tuple(xy) for xy in geometry["coordinates"]))
        elif kind == "MultiLineString":
            lines.extend(tuple(tuple(xy) for xy in part) for part in geometry["coordinates"])
        elif kind == "Point":
            continue
        else:
            raise ValueError(f"unsupported geometry type {kind!r} in reference document")
    if not lines:
        raise ValueError("no polyline features found")
    return lines
