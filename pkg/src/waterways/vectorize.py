"""Vectorize a raster skeleton into a graph of waterway centerline segments.

Skeleton cells with 8-adjacency degree other than 2 are graph nodes
(junctions, endpoints and isolated cells). Each maximal chain of degree-2
cells between nodes becomes one polyline segment through the cell centers.
Closed chains with no node at all become a single closed segment anchored at
their lowest row-major cell. Isolated cells degrade to one-point segments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import GeoGrid, require_binary

_OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

UNASSIGNED_ORDER = -1

GEOJSON_FORMAT_VERSION = 1

Point = tuple[float, float]


@dataclass(frozen=True)
class Node:
    id: int
    lon: float
    lat: float
    degree: int


@dataclass(frozen=True)
class Segment:
    """One waterway centerline. ``points`` are (lon, lat) cell centers.

    ``start_node``/``end_node`` are node ids, or None for a closed segment
    that meets no node. A closed segment repeats its anchor point first and
    last. ``order`` is the stream order, UNASSIGNED_ORDER until assigned.
    """

    id: int
    points: tuple[Point, ...]
    start_node: int | None = None
    end_node: int | None = None
    order: int = UNASSIGNED_ORDER

    @property
    def closed(self) -> bool:
        return len(self.points) >= 3 and self.points[0] == self.points[-1]


@dataclass(frozen=True)
class WaterwayGraph:
    nodes: tuple[Node, ...]
    segments: tuple[Segment, ...]


def inner_points(segment: Segment) -> list[Point]:
    """Representative points of a segment, excluding its tips.

    Open segments drop their first and last point; a two-point segment
    yields its midpoint; a one-point segment yields nothing. Closed segments
    keep every point but drop the duplicated anchor once.
    """
    pts = segment.points
    if segment.closed:
        return list(pts[1:])
    if len(pts) >= 3:
        return list(pts[1:-1])
    if len(pts) == 2:
        (lon0, lat0), (lon1, lat1) = pts
        return [((lon0 + lon1) / 2.0, (lat0 + lat1) / 2.0)]
    return []


def _adjacency(arr: np.ndarray) -> dict[tuple[int, int], list[tuple[int, int]]]:
    cells = {}
    n_rows, n_cols = arr.shape
    for row, col in zip(*np.nonzero(arr)):
        row, col = int(row), int(col)
        nbrs = []
        for dr, dc in _OFFSETS_8:
            r, c = row + dr, col + dc
            if 0 <= r < n_rows and 0 <= c < n_cols and arr[r, c]:
                nbrs.append((r, c))
        cells[(row, col)] = nbrs
    return cells


def skeleton_to_graph(skeleton: GeoGrid) -> WaterwayGraph:
    """Trace a one-cell-wide skeleton into nodes and polyline segments."""
    require_binary(skeleton, "skeleton")
    arr = np.asarray(skeleton.data)
    if _has_square_block(arr):
        raise ValueError("input is not a skeleton: contains a 2x2 foreground block")
    transform = skeleton.transform
    adjacency = _adjacency(arr)

    node_cells = sorted(cell for cell, nbrs in adjacency.items() if len(nbrs) != 2)
    node_id = {cell: i for i, cell in enumerate(node_cells)}
    nodes = tuple(
        Node(i, *transform.pixel_to_geo(*cell), degree=len(adjacency[cell]))
        for i, cell in enumerate(node_cells)
    )

    segments: list[Segment] = []
    used_steps: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    covered: set[tuple[int, int]] = set()

    def emit(path_cells: list[tuple[int, int]], start: int | None, end: int | None) -> None:
        points = tuple(transform.pixel_to_geo(r, c) for r, c in path_cells)
        segments.append(Segment(len(segments), points, start, end))
        covered.update(path_cells)
        for a, b in zip(path_cells, path_cells[1:]):
            used_steps.add((a, b))
            used_steps.add((b, a))

    for cell in node_cells:
        if not adjacency[cell]:
            emit([cell], node_id[cell], node_id[cell])
            continue
        for first in adjacency[cell]:
            if (cell, first) in used_steps:
                continue
            path = [cell, first]
            prev, current = cell, first
            while current not in node_id:
                a, b = adjacency[current]
                nxt = b if a == prev else a
                path.append(nxt)
                prev, current = current, nxt
            emit(path, node_id[cell], node_id[path[-1]])

    # Anything untouched now sits on pure cycles of degree-2 cells.
    for cell in sorted(adjacency):
        if cell in covered or len(adjacency[cell]) != 2:
            continue
        path = [cell, min(adjacency[cell])]
        prev, current = cell, path[1]
        while current != cell:
            a, b = adjacency[current]
            nxt = b if a == prev else a
            path.append(nxt)
            prev, current = current, nxt
        emit(path, None, None)

    return WaterwayGraph(nodes, tuple(segments))


def _has_square_block(arr: np.ndarray) -> bool:
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        return False
    fg = arr != 0
    return bool((fg[:-1, :-1] & fg[1:, :-1] & fg[:-1, 1:] & fg[1:, 1:]).any())


def graph_to_geojson(graph: WaterwayGraph, metadata: dict | None = None) -> dict:
    """GeoJSON FeatureCollection for a graph, ordered by segment id.

    Multi-point segments become LineString features; one-point segments
    become Point features. Every feature carries ``segment_id`` and
    ``stream_order`` properties.
    """
    features = []
    for seg in sorted(graph.segments, key=lambda s: s.id):
        if len(seg.points) == 1:
            geometry = {"type": "Point", "coordinates": list(seg.points[0])}
        else:
            geometry = {"type": "LineString", "coordinates": [list(p) for p in seg.points]}
        features.append(
            {
                "type": "Feature",
                "geometry": geometry,
                "properties": {"segment_id": seg.id, "stream_order": seg.order},
            }
        )
    doc = {
        "type": "FeatureCollection",
        "format_version": GEOJSON_FORMAT_VERSION,
        "features": features,
    }
    if metadata:
        doc["metadata"] = dict(sorted(metadata.items()))
    return doc


def graph_from_geojson(doc: dict) -> WaterwayGraph:
    """Rebuild a WaterwayGraph from a document written by graph_to_geojson."""
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    raw_segments: list[Segment] = []
    for feature in doc.get("features", []):
        geometry = feature.get("geometry", {})
        properties = feature.get("properties", {})
        seg_id = properties.get("segment_id")
        order = properties.get("stream_order", UNASSIGNED_ORDER)
        if seg_id is None:
            raise ValueError("feature is missing the segment_id property")
        if geometry.get("type") == "Point":
            points = (tuple(geometry["coordinates"]),)
        elif geometry.get("type") == "LineString":
            points = tuple(tuple(xy) for xy in geometry["coordinates"])
        else:
            raise ValueError(f"unsupported geometry type {geometry.get('type')!r}")
        raw_segments.append(Segment(int(seg_id), points, order=int(order)))
    raw_segments.sort(key=lambda s: s.id)

    # Nodes are rebuilt from segment tips: row-major means north first. A
    # closed segment's anchor is a node only when something else meets it
    # there (e.g. two loops sharing one junction); a lone cycle has no node.
    tip_points: set[Point] = set()
    anchor_counts: dict[Point, int] = {}
    for seg in raw_segments:
        if len(seg.points) == 1:
            tip_points.add(seg.points[0])
        elif seg.closed:
            anchor_counts[seg.points[0]] = anchor_counts.get(seg.points[0], 0) + 1
        else:
            tip_points.add(seg.points[0])
            tip_points.add(seg.points[-1])
    tip_points.update(p for p, n in anchor_counts.items() if n >= 2)
    ordered = sorted(tip_points, key=lambda p: (-p[1], p[0]))
    node_id = {point: i for i, point in enumerate(ordered)}

    degree: dict[Point, int] = {point: 0 for point in ordered}
    for seg in raw_segments:
        if len(seg.points) < 2:
            continue
        for tip in (seg.points[0], seg.points[-1]):
            if tip in degree:
                degree[tip] += 1

    segments = []
    for seg in raw_segments:
        if len(seg.points) == 1:
            nid = node_id[seg.points[0]]
            segments.append(replace(seg, start_node=nid, end_node=nid))
        elif seg.closed and seg.points[0] not in node_id:
            segments.append(replace(seg, start_node=None, end_node=None))
        else:
            segments.append(
                replace(
                    seg,
                    start_node=node_id[seg.points[0]],
                    end_node=node_id[seg.points[-1]],
                )
            )
    nodes = tuple(Node(i, point[0], point[1], degree[point]) for point, i in node_id.items())
    return WaterwayGraph(nodes, tuple(segments))


def write_geojson(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_graph_geojson(path: str | Path) -> WaterwayGraph:
    return graph_from_geojson(json.loads(Path(path).read_text(encoding="utf-8")))
