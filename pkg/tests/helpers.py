"""Independent reference oracles and generators shared by the test suite.

Everything in this module is deliberately implemented with different
machinery than the package under test (mpmath instead of numpy floats,
scipy.ndimage labelling instead of hand-rolled flood fills, shapely
instead of the in-house segment geometry, leaf-up recursion instead of
elevation-ordered traversal) so that an implementation bug cannot hide
by being shared between both sides of a comparison.
"""

from __future__ import annotations

import math
import random
from collections import Counter

import mpmath
import numpy as np
from scipy import ndimage
from shapely.geometry import LineString, Point

from waterways.grid import GeoGrid, GeoTransform

mpmath.mp.dps = 50

_STRUCT_8 = np.ones((3, 3), dtype=bool)
_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


# ---------------------------------------------------------------------------
# grid builders


def make_transform(
    n_rows: int,
    n_cols: int,
    origin_lon: float = 30.0,
    origin_lat: float = 1.0,
    cell_size: float = 0.001,
) -> GeoTransform:
    return GeoTransform(
        origin_lon=origin_lon,
        origin_lat=origin_lat,
        cell_size=cell_size,
        n_rows=n_rows,
        n_cols=n_cols,
    )


def make_grid(data, nodata=None, **kwargs) -> GeoGrid:
    arr = np.asarray(data)
    transform = make_transform(arr.shape[0], arr.shape[1], **kwargs)
    return GeoGrid(transform=transform, data=arr, nodata=nodata)


# ---------------------------------------------------------------------------
# high-precision sigmoid oracle


def sigmoid_oracle(x: float) -> int:
    """round(255 / (1 + e^(-0.6 x))) with 50-digit arithmetic, half away from zero."""
    value = 255 / (1 + mpmath.e ** (mpmath.mpf("-0.6") * mpmath.mpf(repr(x))))
    floor = mpmath.floor(value)
    if value - floor >= mpmath.mpf("0.5"):
        floor += 1
    return int(floor)


# ---------------------------------------------------------------------------
# binary-raster topology oracles (scipy.ndimage)


def fg_component_count(mask: np.ndarray) -> int:
    """Number of 8-connected foreground components."""
    _, count = ndimage.label(np.asarray(mask) != 0, structure=_STRUCT_8)
    return count


def bg_component_count(mask: np.ndarray) -> int:
    """Number of 4-connected background components of the padded complement.

    Padding with one background ring makes the count comparable across
    masks: it is always (1 + number of holes).
    """
    padded = np.pad(np.asarray(mask) != 0, 1, constant_values=False)
    _, count = ndimage.label(~padded, structure=_STRUCT_4)
    return count


def has_2x2_block(mask: np.ndarray) -> bool:
    m = np.asarray(mask) != 0
    return bool(np.any(m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]))


def oracle_cell_state(patch: np.ndarray) -> str:
    """Classify the center of a 3x3 foreground patch as 'S', 'I' or 'R'.

    Independent recomputation of the keep/interior/removable rule using
    scipy labelling on the patch: anchors (<= 1 foreground neighbour) and
    cells whose removal changes the patch's 8-connected foreground
    component count are separators; cells whose removal changes the
    4-connected background component count are interior; the rest are
    removable.
    """
    patch = np.asarray(patch).astype(bool)
    if not patch[1, 1]:
        raise ValueError("center must be foreground")
    neighbours = int(patch.sum()) - 1
    if neighbours <= 1:
        return "S"
    removed = patch.copy()
    removed[1, 1] = False
    _, fg_before = ndimage.label(patch, structure=_STRUCT_8)
    _, fg_after = ndimage.label(removed, structure=_STRUCT_8)
    if fg_before != fg_after:
        return "S"
    _, bg_before = ndimage.label(~patch, structure=_STRUCT_4)
    _, bg_after = ndimage.label(~removed, structure=_STRUCT_4)
    if bg_before != bg_after:
        return "I"
    return "R"


_NEIGHBOUR_OFFSETS = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
)


def patch_from_config(config: int) -> np.ndarray:
    """3x3 foreground patch for an 8-bit neighbour configuration."""
    patch = np.zeros((3, 3), dtype=bool)
    patch[1, 1] = True
    for bit, (dr, dc) in enumerate(_NEIGHBOUR_OFFSETS):
        if config >> bit & 1:
            patch[1 + dr, 1 + dc] = True
    return patch


def oracle_state_table() -> np.ndarray:
    """State ('S'/'I'/'R') for every 8-neighbour configuration."""
    return np.array([oracle_cell_state(patch_from_config(c)) for c in range(256)])


def oracle_states(mask: np.ndarray, table: np.ndarray) -> dict[tuple[int, int], str]:
    """State of every foreground cell of ``mask`` via an oracle table."""
    m = np.asarray(mask) != 0
    states: dict[tuple[int, int], str] = {}
    for row, col in zip(*np.nonzero(m)):
        config = 0
        for bit, (dr, dc) in enumerate(_NEIGHBOUR_OFFSETS):
            r, c = row + dr, col + dc
            if 0 <= r < m.shape[0] and 0 <= c < m.shape[1] and m[r, c]:
                config |= 1 << bit
        states[int(row), int(col)] = str(table[config])
    return states


def residual_blocks_are_irreducible(mask: np.ndarray, table: np.ndarray) -> bool:
    """True when no 2x2 foreground block contains a removable cell.

    A maximally thinned raster may retain a 2x2 block only when every cell
    of the block is pinned by topology (state 'S' or 'I'); a block with a
    removable cell means the thinning stopped early.
    """
    arr = np.asarray(mask) != 0
    states = oracle_states(arr, table)
    blocks = np.argwhere(arr[:-1, :-1] & arr[:-1, 1:] & arr[1:, :-1] & arr[1:, 1:])
    for r, c in blocks:
        for cell in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
            if states[int(cell[0]), int(cell[1])] == "R":
                return False
    return True


def random_mask(rng: random.Random, n_rows: int, n_cols: int, density: float) -> np.ndarray:
    return np.array(
        [[1 if rng.random() < density else 0 for _ in range(n_cols)] for _ in range(n_rows)],
        dtype=np.uint8,
    )


def random_ribbon_mask(rng: random.Random, size: int = 20) -> np.ndarray:
    """Waterway-shaped test input: dilated random walks on a square grid.

    Uniform Bernoulli noise can contain 2x2 blocks that are irreducible
    under topology-preserving removal (each cell pinned by a hole or a
    diagonal spur), so width assertions use channel-like masks instead.
    """
    canvas = np.zeros((size, size), dtype=bool)
    for _ in range(rng.randint(1, 3)):
        r, c = rng.randrange(size), rng.randrange(size)
        for _ in range(rng.randint(8, 30)):
            canvas[r, c] = True
            r = min(size - 1, max(0, r + rng.choice([-1, 0, 1])))
            c = min(size - 1, max(0, c + rng.choice([-1, 0, 1])))
    grown = ndimage.distance_transform_edt(~canvas) <= rng.choice([1, 1, 2]) + 1e-9
    return grown.astype(np.uint8)


# ---------------------------------------------------------------------------
# classical Strahler oracle on rooted trees


def classical_strahler(children: dict[int, list[int]], root: int) -> dict[int, int]:
    """Leaf-up Strahler order of every non-root node's outgoing edge.

    ``children[node]`` lists the upstream neighbours of ``node``.  The
    returned mapping gives, for each node except the root, the order of
    the stream flowing from that node toward its parent.
    """
    order: dict[int, int] = {}

    def assign(node: int) -> int:
        kids = children.get(node, [])
        if not kids:
            result = 1
        else:
            child_orders = sorted((assign(k) for k in kids), reverse=True)
            result = child_orders[0]
            if len(child_orders) >= 2 and child_orders[1] == result:
                result += 1
        order[node] = result
        return result

    for node in children.get(root, []):
        assign(node)
    return order


def random_downhill_tree(rng: random.Random, max_edges: int = 50):
    """Random rooted tree whose internal nodes all have >= 2 children.

    Returns (children, parent, root, coords, elevation).  Elevations
    strictly increase away from the root so every edge runs downhill.
    Node coordinates are distinct points on a jittered lattice.
    """
    children: dict[int, list[int]] = {0: []}
    parent: dict[int, int] = {}
    elevation = {0: 0.0}
    next_id = 1
    # The root keeps a single trunk child; every other expandable node
    # receives 2-4 children so no internal node ever has degree 2.
    children[0] = [1]
    parent[1] = 0
    elevation[1] = rng.uniform(1.0, 2.0)
    children[1] = []
    next_id = 2
    frontier = [1]
    edge_count = 1
    while frontier and edge_count < max_edges:
        node = frontier.pop(rng.randrange(len(frontier)))
        fanout = rng.randint(2, 4)
        if edge_count + fanout > max_edges:
            continue  # leaving this node a leaf keeps the invariant
        for _ in range(fanout):
            child = next_id
            next_id += 1
            children.setdefault(node, []).append(child)
            children[child] = []
            parent[child] = node
            elevation[child] = elevation[node] + rng.uniform(0.5, 2.0)
            edge_count += 1
            if rng.random() < 0.6:
                frontier.append(child)
    coords = {}
    taken = set()
    for node in children:
        while True:
            xy = (
                round(rng.uniform(-1.0, 1.0), 6),
                round(rng.uniform(-1.0, 1.0), 6),
            )
            if xy not in taken:
                taken.add(xy)
                coords[node] = xy
                break
    return children, parent, 0, coords, elevation


def random_cyclic_graph(rng: random.Random, max_nodes: int = 12):
    """Random connected graph containing at least one cycle.

    Returns (edges, coords, elevation) where ``edges`` is a list of
    distinct unordered node pairs.
    """
    n = rng.randint(4, max_nodes)
    edges: set[tuple[int, int]] = set()
    for node in range(1, n):
        other = rng.randrange(node)
        edges.add((min(node, other), max(node, other)))
    extra = rng.randint(1, 3)
    attempts = 0
    while extra and attempts < 100:
        attempts += 1
        a, b = rng.randrange(n), rng.randrange(n)
        if a == b:
            continue
        pair = (min(a, b), max(a, b))
        if pair in edges:
            continue
        edges.add(pair)
        extra -= 1
    if len(edges) == n - 1:  # all attempts collided: force one cycle
        for a in range(n):
            for b in range(a + 1, n):
                if (a, b) not in edges:
                    edges.add((a, b))
                    break
            else:
                continue
            break
    coords = {}
    taken = set()
    for node in range(n):
        while True:
            xy = (
                round(rng.uniform(-1.0, 1.0), 6),
                round(rng.uniform(-1.0, 1.0), 6),
            )
            if xy not in taken:
                taken.add(xy)
                coords[node] = xy
                break
    elevation = {node: rng.uniform(0.0, 10.0) for node in range(n)}
    return sorted(edges), coords, elevation


def bridge_edges(n_nodes: int, edges: list[tuple[int, int]]) -> set[tuple[int, int]]:
    """Bridges of an undirected graph (edges not on any cycle)."""
    adjacency: dict[int, list[tuple[int, int]]] = {v: [] for v in range(n_nodes)}
    for idx, (a, b) in enumerate(edges):
        adjacency[a].append((b, idx))
        adjacency[b].append((a, idx))
    visited = [False] * n_nodes
    entry = [0] * n_nodes
    low = [0] * n_nodes
    bridges: set[tuple[int, int]] = set()
    timer = 0
    for start in range(n_nodes):
        if visited[start]:
            continue
        stack = [(start, -1, iter(adjacency[start]))]
        visited[start] = True
        entry[start] = low[start] = timer
        timer += 1
        while stack:
            node, via_edge, it = stack[-1]
            advanced = False
            for neighbour, edge_idx in it:
                if edge_idx == via_edge:
                    continue
                if visited[neighbour]:
                    low[node] = min(low[node], entry[neighbour])
                else:
                    visited[neighbour] = True
                    entry[neighbour] = low[neighbour] = timer
                    timer += 1
                    stack.append((neighbour, edge_idx, iter(adjacency[neighbour])))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                if stack:
                    parent_node = stack[-1][0]
                    low[parent_node] = min(low[parent_node], low[node])
                    if low[node] > entry[parent_node]:
                        a, b = edges[via_edge]
                        bridges.add((a, b))
    return bridges


# ---------------------------------------------------------------------------
# nearest-distance oracle (shapely)


def shapely_nearest(point: tuple[float, float], polylines) -> float:
    """Exact minimum planar distance from a point to a set of polylines."""
    p = Point(point)
    return min(LineString(line).distance(p) for line in polylines)


def random_polylines(rng: random.Random, count: int, span: float = 1.0, step: float = 0.2):
    lines = []
    for _ in range(count):
        n = rng.randint(2, 6)
        x, y = rng.uniform(-span, span), rng.uniform(-span, span)
        points = [(x, y)]
        for _ in range(n - 1):
            x += rng.uniform(-step, step)
            y += rng.uniform(-step, step)
            points.append((round(x, 12), round(y, 12)))
        lines.append(points)
    return lines


# ---------------------------------------------------------------------------
# even-odd polygon fill oracle


def point_in_ring_pixel(xc: float, yc: float, ring_xy) -> bool:
    """Even-odd test with half-open ties: crossings at or left of the point
    flip parity, and an edge counts for scanline y when min <= y < max.

    This states the documented center-inclusion convention (entry crossing
    inclusive, exit crossing exclusive) directly per point, instead of the
    interval sweep the implementation uses.
    """
    crossings_at_or_left = 0
    for (x0, y0), (x1, y1) in zip(ring_xy, ring_xy[1:]):
        if y0 == y1:
            continue
        lo, hi = (y0, y1) if y0 < y1 else (y1, y0)
        if not (lo <= yc < hi):
            continue
        x_cross = x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
        if x_cross <= xc:
            crossings_at_or_left += 1
    return crossings_at_or_left % 2 == 1


def fill_ring_oracle(ring, transform: GeoTransform) -> set[tuple[int, int]]:
    """Cells whose centers fall inside the ring, by direct per-center testing."""
    if ring[0] != ring[-1]:
        ring = list(ring) + [ring[0]]
    ring_xy = [
        (
            (lon - transform.origin_lon) / transform.cell_size,
            (transform.origin_lat - lat) / transform.cell_size,
        )
        for lon, lat in ring
    ]
    cells = set()
    for row in range(transform.n_rows):
        for col in range(transform.n_cols):
            if point_in_ring_pixel(col + 0.5, row + 0.5, ring_xy):
                cells.add((row, col))
    return cells


# ---------------------------------------------------------------------------
# graph reconstruction and order-trace oracles


def expected_point_multiset(graph) -> Counter:
    """How often each point must appear across segments of a traced graph.

    A node point appears once per incident segment tip (its degree, or once
    for an isolated cell); the anchor of a node-free closed loop appears
    twice because the loop starts and ends there; every other point once.
    """
    expected: Counter = Counter()
    anchor_twice = {
        seg.points[0] for seg in graph.segments if seg.closed and seg.start_node is None
    }
    node_points = {(node.lon, node.lat): node for node in graph.nodes}
    all_points = {p for seg in graph.segments for p in seg.points}
    for point in all_points:
        node = node_points.get(point)
        if node is not None:
            expected[point] = max(node.degree, 1)
        elif point in anchor_twice:
            expected[point] = 2
        else:
            expected[point] = 1
    return expected


def skeleton_adjacency_degrees(arr: np.ndarray, transform) -> dict:
    """8-neighbour count of every foreground cell, keyed by cell center."""
    arr = np.asarray(arr) != 0
    degrees = {}
    for r, c in np.argwhere(arr):
        count = 0
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if 0 <= rr < arr.shape[0] and 0 <= cc < arr.shape[1] and arr[rr, cc]:
                    count += 1
        degrees[transform.pixel_to_geo(int(r), int(c))] = count
    return degrees


def place_nodes_on_grid(elevation_by_node, side: int = 40):
    """Give every node its own grid cell; return (elevation grid, coords)."""
    t = make_transform(side, side)
    data = np.zeros((side, side))
    coords = {}
    for i, node in enumerate(sorted(elevation_by_node)):
        r, c = divmod(i, side)
        data[r, c] = elevation_by_node[node]
        coords[node] = t.pixel_to_geo(r, c)
    return make_grid(data), coords


def graph_from_edges(coords, edges):
    from waterways.vectorize import Segment, WaterwayGraph

    segments = tuple(
        Segment(i, (coords[a], coords[b])) for i, (a, b) in enumerate(edges)
    )
    return WaterwayGraph((), segments)


def replay_order_trace(graph, elev, trace) -> None:
    """Recheck every trace record against the documented merge rule."""
    line_segments = [s for s in graph.segments if len(s.points) >= 2]
    by_id = {s.id: s for s in line_segments}
    incident: dict = {}
    endpoint_degree: dict = {}
    for seg in line_segments:
        tips = (seg.points[0], seg.points[-1])
        for p in tips:
            endpoint_degree[p] = endpoint_degree.get(p, 0) + 1
        for p in set(tips):
            incident.setdefault(p, []).append(seg.id)

    assert sorted(r.segment_id for r in trace) == sorted(by_id)
    orders: dict = {}
    previous_key = None
    for record in trace:
        seg = by_id[record.segment_id]
        e0 = elev.sample(*seg.points[0])
        e1 = elev.sample(*seg.points[-1])
        assert record.upstream_point == (seg.points[-1] if e1 > e0 else seg.points[0])
        key = -max(e0, e1)
        assert previous_key is None or key >= previous_key  # elevation-descending
        previous_key = key
        tributaries = tuple(
            sorted(
                orders[other]
                for other in incident[record.upstream_point]
                if other != record.segment_id and other in orders
            )
        )
        assert record.tributary_orders == tributaries
        if not tributaries:
            merged = 1
        elif tributaries.count(tributaries[-1]) >= 2:
            merged = tributaries[-1] + 1
        else:
            merged = tributaries[-1]
        assert record.merged_order == merged
        orders[record.segment_id] = merged
    for record in trace:
        seg = by_id[record.segment_id]
        raised = (
            endpoint_degree[seg.points[0]] >= 2
            and endpoint_degree[seg.points[-1]] >= 2
        )
        expected_final = max(2, record.merged_order) if raised else record.merged_order
        assert record.final_order == expected_final


# ---------------------------------------------------------------------------
# miscellaneous


def point_multiset(segments) -> Counter:
    counts: Counter = Counter()
    for seg in segments:
        counts.update(seg.points)
    return counts


def bce_oracle(prediction: float, target: int, weight: float) -> float:
    p = min(max(prediction, 1e-7), 1 - 1e-7)
    return -weight * (target * math.log(p) + (1 - target) * math.log(1 - p))
