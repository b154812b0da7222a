"""Stream order assignment for waterway graphs without flow-direction data.

Classical stream ordering walks a tree from its leaves; vectorized raster
graphs have no guaranteed tree shape, so segments are visited in descending
order of their higher-endpoint elevation instead. When a segment is visited,
the incident segments already ordered at its upper node act as tributaries:

* no ordered tributary: order 1 (a headwater),
* one maximal tributary order n: order n,
* two or more tributaries sharing the maximal order n: order n + 1.

A final pass raises every segment whose both endpoints meet other waterway
ends (endpoint degree >= 2) to at least order 2, which floors every edge of
a cycle at 2. Elevations are sampled from the elevation grid at the cell
under each segment endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .grid import GeoGrid
from .vectorize import Point, Segment, WaterwayGraph

ORDER_CATEGORIES = ("O1", "O2", "O3plus")


def order_category(order: int) -> str:
    """Bucket a stream order into O1 / O2 / O3plus."""
    if order < 1:
        raise ValueError(f"stream order must be >= 1, got {order}")
    if order == 1:
        return "O1"
    if order == 2:
        return "O2"
    return "O3plus"


@dataclass(frozen=True)
class OrderAssignment:
    """Why one segment got its order, in assignment sequence."""

    segment_id: int
    upstream_point: Point
    tributary_orders: tuple[int, ...]
    merged_order: int
    final_order: int


def _sample_elevation(elevation: GeoGrid, point: Point) -> float:
    value = elevation.sample(*point)
    if value is None:
        raise ValueError(
            f"no elevation under segment endpoint ({point[0]!r}, {point[1]!r})"
        )
    return value


def _geometry_key(segment: Segment) -> tuple:
    forward = segment.points
    backward = tuple(reversed(segment.points))
    return min(forward, backward)


def assign_orders_trace(
    graph: WaterwayGraph, elevation: GeoGrid
) -> tuple[WaterwayGraph, tuple[OrderAssignment, ...]]:
    """Assign stream orders, also returning the per-segment assignment trace.

    Ties in higher-endpoint elevation are broken by segment geometry, so the
    result is independent of segment id numbering.
    """
    line_segments = [s for s in graph.segments if len(s.points) >= 2]

    tips: dict[int, tuple[Point, Point]] = {}
    elevations: dict[int, tuple[float, float]] = {}
    for seg in line_segments:
        start, end = seg.points[0], seg.points[-1]
        tips[seg.id] = (start, end)
        elevations[seg.id] = (
            _sample_elevation(elevation, start),
            _sample_elevation(elevation, end),
        )

    incident: dict[Point, list[int]] = {}
    endpoint_degree: dict[Point, int] = {}
    for seg in line_segments:
        for point in tips[seg.id]:
            endpoint_degree[point] = endpoint_degree.get(point, 0) + 1
        for point in set(tips[seg.id]):
            incident.setdefault(point, []).append(seg.id)

    def upstream_point(seg_id: int) -> Point:
        start, end = tips[seg_id]
        e_start, e_end = elevations[seg_id]
        return end if e_end > e_start else start

    by_id = {seg.id: seg for seg in line_segments}
    queue = sorted(
        by_id,
        key=lambda sid: (-max(elevations[sid]), _geometry_key(by_id[sid])),
    )

    orders: dict[int, int] = {}
    trace: list[OrderAssignment] = []
    for seg_id in queue:
        up = upstream_point(seg_id)
        tributary_orders = tuple(
            sorted(orders[other] for other in incident[up] if other != seg_id and other in orders)
        )
        if not tributary_orders:
            merged = 1
        else:
            top = tributary_orders[-1]
            merged = top + 1 if tributary_orders.count(top) >= 2 else top
        orders[seg_id] = merged
        trace.append(OrderAssignment(seg_id, up, tributary_orders, merged, merged))

    # Cycle floor: a segment joined to other waterways at both ends is never
    # order 1.
    final_trace = []
    for record in trace:
        start, end = tips[record.segment_id]
        if endpoint_degree[start] >= 2 and endpoint_degree[end] >= 2:
            final = max(2, record.merged_order)
        else:
            final = record.merged_order
        orders[record.segment_id] = final
        final_trace.append(replace(record, final_order=final))

    segments = tuple(
        replace(seg, order=orders[seg.id]) if seg.id in orders else seg
        for seg in graph.segments
    )
    return WaterwayGraph(graph.nodes, segments), tuple(final_trace)


def assign_orders(graph: WaterwayGraph, elevation: GeoGrid) -> WaterwayGraph:
    """Assign a stream order to every multi-point segment of a graph."""
    ordered, _ = assign_orders_trace(graph, elevation)
    return ordered
