#!/usr/bin/env python3
"""Regenerate the synthetic watershed fixture and its golden outputs.

Builds a deterministic 200x200 scene: a dilated channel tree draining north,
a small closed ring, and one isolated cell, over a south-rising elevation
model. The golden skeleton/graph/summary files are produced by running the
shipped pipeline command on the generated inputs, then sanity-checked.

Usage: python3 scripts/make_fixture.py [--root fixtures/watershed]
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

import numpy as np
from scipy import ndimage

from waterways.ascii_grid import read_ascii_grid, write_ascii_grid
from waterways.cli import main as cli_main
from waterways.grid import GeoGrid, GeoTransform

SIZE = 200
ORIGIN_LON = 30.0
ORIGIN_LAT = 1.0
CELL = 0.001

TRANSFORM = GeoTransform(ORIGIN_LON, ORIGIN_LAT, CELL, SIZE, SIZE)

# Channel centerlines as (row0, col0, row1, col1); every path descends one
# row per step so elevation strictly increases toward the headwaters.
PATHS = (
    (5, 100, 60, 100),  # trunk to the northern outlet
    (60, 100, 110, 60),  # west arm
    (60, 100, 110, 140),  # east arm
    (110, 60, 150, 40),  # west leaves
    (110, 60, 150, 85),
    (110, 140, 150, 120),  # east leaves
    (110, 140, 150, 165),
)

RING_ANCHOR = (168, 20)
RING_CELLS = ((0, 2), (1, 1), (1, 3), (2, 0), (2, 4), (3, 1), (3, 3), (4, 2))
ISOLATED_CELL = (180, 180)

CHANNEL_PROBABILITY = 0.92
BACKGROUND_PROBABILITY = 0.03
REFERENCE_SHIFT_LON = 0.0007


def path_cells(r0: int, c0: int, r1: int, c1: int) -> list[tuple[int, int]]:
    if abs(c1 - c0) > r1 - r0:
        raise ValueError("path must descend at least one row per column step")
    steps = r1 - r0
    return [
        (r0 + i, round(c0 + (c1 - c0) * i / max(1, steps))) for i in range(steps + 1)
    ]


def center(r: int, c: int) -> tuple[float, float]:
    return TRANSFORM.pixel_to_geo(r, c)


def build_mask() -> np.ndarray:
    tree = np.zeros((SIZE, SIZE), dtype=bool)
    for endpoints in PATHS:
        for r, c in path_cells(*endpoints):
            tree[r, c] = True
    tree = ndimage.binary_dilation(tree, structure=np.ones((3, 3), dtype=bool))
    mask = np.full((SIZE, SIZE), BACKGROUND_PROBABILITY)
    mask[tree] = CHANNEL_PROBABILITY
    for dr, dc in RING_CELLS:
        mask[RING_ANCHOR[0] + dr, RING_ANCHOR[1] + dc] = CHANNEL_PROBABILITY
    mask[ISOLATED_CELL] = CHANNEL_PROBABILITY
    return mask


def build_dem() -> np.ndarray:
    rng = random.Random(20250814)
    noise = np.array(
        [[round(rng.uniform(0.0, 0.05), 3) for _ in range(SIZE)] for _ in range(SIZE)]
    )
    rows = np.arange(SIZE, dtype=float)[:, None]
    return np.round(0.25 * rows + noise, 3)


def reference_document() -> dict:
    def line(endpoints) -> list[list[float]]:
        return [
            [lon + REFERENCE_SHIFT_LON, lat]
            for lon, lat in (center(r, c) for r, c in path_cells(*endpoints))
        ]

    ring = [
        list(center(RING_ANCHOR[0] + dr, RING_ANCHOR[1] + dc))
        for dr, dc in (*RING_CELLS[:1], *RING_CELLS[1:], RING_CELLS[0])
    ]
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": line(PATHS[0])},
            "properties": {"name": "trunk"},
        },
        {
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": line(PATHS[1])},
            "properties": {"name": "west arm"},
        },
        {
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": line(PATHS[2])},
            "properties": {"name": "east arm"},
        },
        {
            "type": "Feature",
            "geometry": {
                "type": "MultiLineString",
                "coordinates": [line(PATHS[3]), line(PATHS[4])],
            },
            "properties": {"name": "west leaves"},
        },
        {
            "type": "Feature",
            "geometry": {
                "type": "MultiLineString",
                "coordinates": [line(PATHS[5]), line(PATHS[6])],
            },
            "properties": {"name": "east leaves"},
        },
        {
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": ring},
            "properties": {"name": "oxbow ring"},
        },
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": list(center(*ISOLATED_CELL))},
            "properties": {"name": "stray well (ignored by the loader)"},
        },
    ]
    return {"type": "FeatureCollection", "features": features}


def requests_csv() -> str:
    rows = ["lon,lat,country,service"]
    near = [center(30, 100), center(80, 84), center(130, 50), center(140, 130)]
    for lon, lat in near:
        rows.append(f"{lon},{lat},ke,sms")
    rows.append(f"{center(120, 72)[0] + 0.0015},{center(120, 72)[1]},ug,app")
    rows.append(f"{center(170, 22)[0]},{center(170, 22)[1]},ug,")
    rows.append(f"{ORIGIN_LON + 0.19},{ORIGIN_LAT - 0.19},ke,sms")
    rows.append(f"{ORIGIN_LON + 0.185},{ORIGIN_LAT - 0.02},tz,sms")
    return "\n".join(rows) + "\n"


def has_square_block(mask: np.ndarray) -> bool:
    m = mask != 0
    return bool(np.any(m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]))


def component_counts(mask: np.ndarray) -> tuple[int, int]:
    fg = ndimage.label(mask, structure=np.ones((3, 3)))[1]
    padded = np.pad(mask.astype(bool), 1)
    bg = ndimage.label(~padded)[1]
    return fg, bg - 1  # holes = background components minus the outside


def write_fixture(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    mask = build_mask()
    dem = build_dem()
    write_ascii_grid(GeoGrid(TRANSFORM, mask), root / "mask.asc")
    write_ascii_grid(GeoGrid(TRANSFORM, dem), root / "dem.asc")
    (root / "reference.geojson").write_text(
        json.dumps(reference_document(), indent=2) + "\n", encoding="utf-8"
    )
    (root / "requests.csv").write_text(requests_csv(), encoding="utf-8")
    (root / "pipeline.cfg").write_text(
        "# synthetic watershed demo configuration\n"
        "mask = mask.asc\n"
        "dem = dem.asc\n"
        "reference = reference.geojson\n"
        "threshold = 0.5\n"
        "eval_threshold = 0.002\n"
        "out_dir = out\n",
        encoding="utf-8",
    )


def write_goldens(root: Path) -> None:
    goldens = root / "goldens"
    goldens.mkdir(exist_ok=True)
    code = cli_main(
        ["pipeline", "--config", str(root / "pipeline.cfg"), "--out-dir", str(goldens)]
    )
    if code != 0:
        raise SystemExit(f"pipeline failed with exit status {code}")

    skeleton = read_ascii_grid(goldens / "skeleton.asc").data
    binarized = build_mask() >= 0.5
    if has_square_block(skeleton):
        raise SystemExit("skeleton is not unit-wide; adjust the fixture geometry")
    if component_counts(skeleton) != component_counts(binarized):
        raise SystemExit("thinning changed fixture topology")

    graph = json.loads((goldens / "waterways.geojson").read_text())
    orders = sorted(
        f["properties"]["stream_order"]
        for f in graph["features"]
        if f["geometry"]["type"] == "LineString"
    )
    if orders[-1] < 3:
        raise SystemExit(f"expected an order-3 trunk, got orders {orders}")
    point_features = [
        f for f in graph["features"] if f["geometry"]["type"] == "Point"
    ]
    if len(point_features) != 1:
        raise SystemExit("expected exactly one single-cell waterway feature")
    print(f"fixture ok: {len(graph['features'])} segments, orders {orders}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--root",
        default=Path(__file__).resolve().parent.parent / "fixtures" / "watershed",
        type=Path,
    )
    args = parser.parse_args(argv)
    write_fixture(args.root)
    write_goldens(args.root)
    return 0


if __name__ == "__main__":
    sys.exit(main())
