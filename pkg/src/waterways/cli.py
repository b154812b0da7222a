"""Command line interface for the waterway mapping pipeline.

Every command reads and writes plain files (ASCII grids, GeoJSON, CSV) and
is deterministic: re-running with the same inputs produces byte-identical
outputs. Progress lines go to stderr as ``stage=... wall_s=... key=value``
pairs and never into the artifacts. Exit status is 0 on success, 1 for bad
input (unknown flags, missing files, format violations), 2 for internal
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ascii_grid import read_ascii_grid, write_ascii_grid
from .compositing import (
    BUFFER_METERS,
    CLOUD_THRESHOLD,
    ManifestTileProvider,
    greedy_composite,
)
from .evaluation import (
    DEFAULT_REQUEST_THRESHOLD,
    ReferenceIndex,
    distance_summary,
    hit_rate,
    load_polylines_geojson,
    load_requests_csv,
    recall_requests,
    write_summary_csv,
)
from .features import CHANNEL_NAMES, assemble_stack
from .grid import GeoGrid
from .labels import TypeWeightTable, burn_vectors, weights_from_labels
from .stream_order import assign_orders, order_category
from .thinning import binarize, thin_trace
from .vectorize import (
    GEOJSON_FORMAT_VERSION,
    graph_to_geojson,
    inner_points,
    read_graph_geojson,
    skeleton_to_graph,
    write_geojson,
)

LOG = logging.getLogger("waterways")

ASCII_GRID_FORMAT_VERSION = 1
SUMMARY_FORMAT_VERSION = 1

COMPOSITE_SUFFIXES = ("nir", "red", "green", "blue")


class InputError(ValueError):
    """Bad user input: gets a one-line message and exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1, not argparse's default 2
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log_stage(stage: str, started: float, **counts) -> None:
    extras = " ".join(f"{key}={value}" for key, value in counts.items())
    LOG.info("stage=%s wall_s=%.3f %s", stage, time.perf_counter() - started, extras)


def _require_file(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {p}")
    return p


def _read_grid(path: str | Path) -> GeoGrid:
    return read_ascii_grid(_require_file(path))


def _read_json(path: str | Path) -> dict:
    try:
        return json.loads(_require_file(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: not valid JSON ({err})") from err


def _bbox(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("bbox must be lonmin,latmin,lonmax,latmax")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def cmd_composite(args) -> int:
    started = time.perf_counter()
    provider = ManifestTileProvider(_require_file(args.manifest))
    result = greedy_composite(provider, args.bbox, args.threshold, args.buffer_m)
    for suffix, channel in zip(COMPOSITE_SUFFIXES, result.channels):
        write_ascii_grid(channel, f"{args.out}_{suffix}.asc")
    write_ascii_grid(result.coverage, f"{args.out}_coverage.asc")
    _log_stage(
        "composite",
        started,
        tiles_used=len(result.contributions),
        uncovered_fraction=f"{result.uncovered_fraction:.6f}",
    )
    return 0


def cmd_features(args) -> int:
    started = time.perf_counter()
    nrgb = tuple(_read_grid(p) for p in args.nrgb)
    dem = _read_grid(args.dem)
    stack = assemble_stack(nrgb, dem)
    for name in CHANNEL_NAMES:
        write_ascii_grid(stack.channel(name), f"{args.out}_{name}.asc")
    _log_stage("features", started, channels=len(CHANNEL_NAMES), cells=stack.transform.n_rows * stack.transform.n_cols)
    return 0


def _split_label_features(doc: dict):
    lines, polygons = [], []
    for feature in doc.get("features", []):
        geometry = feature.get("geometry", {})
        properties = feature.get("properties", {})
        type_name = properties.get("waterway_type")
        if type_name is None:
            raise InputError("label feature is missing the waterway_type property")
        kind = geometry.get("type")
        if kind == "LineString":
            lines.append((list(map(tuple, geometry["coordinates"])), type_name))
        elif kind == "Polygon":
            rings = geometry["coordinates"]
            if rings:
                polygons.append((list(map(tuple, rings[0])), type_name))
        else:
            raise InputError(f"unsupported label geometry {kind!r}")
    return lines, polygons


def cmd_rasterize_labels(args) -> int:
    started = time.perf_counter()
    template = _read_grid(args.like)
    table = TypeWeightTable.from_config(_require_file(args.weights)) if args.weights else TypeWeightTable()
    lines, polygons = _split_label_features(_read_json(args.geojson))
    labels = burn_vectors(lines, polygons, template.transform, table)
    target, weight = weights_from_labels(labels, table)
    write_ascii_grid(labels.grid, f"{args.out}_labels.asc")
    write_ascii_grid(target, f"{args.out}_target.asc")
    write_ascii_grid(weight, f"{args.out}_weight.asc")
    _log_stage(
        "rasterize-labels",
        started,
        lines=len(lines),
        polygons=len(polygons),
        labeled_cells=int((labels.grid.data > 0).sum()),
    )
    return 0


def _thin(mask_path, dem_path, threshold: float):
    probability = _read_grid(mask_path)
    dem = _read_grid(dem_path)
    mask = binarize(probability, threshold)
    result = thin_trace(mask, dem)
    if result.stable_interior:
        LOG.warning("thin: %d interior cells could not be released", result.stable_interior)
    return mask, result


def cmd_thin(args) -> int:
    started = time.perf_counter()
    mask, result = _thin(args.mask, args.dem, args.threshold)
    write_ascii_grid(result.skeleton, args.out)
    _log_stage(
        "thin",
        started,
        cells_in=int(mask.data.sum()),
        cells_out=int(result.skeleton.data.sum()),
        removed=len(result.removed),
        stable_interior=result.stable_interior,
    )
    return 0


def cmd_vectorize(args) -> int:
    started = time.perf_counter()
    skeleton = _read_grid(args.skeleton)
    graph = skeleton_to_graph(skeleton)
    write_geojson(graph_to_geojson(graph), args.out)
    _log_stage("vectorize", started, nodes=len(graph.nodes), segments=len(graph.segments))
    return 0


def cmd_order(args) -> int:
    started = time.perf_counter()
    graph = read_graph_geojson(_require_file(args.graph))
    dem = _read_grid(args.dem)
    ordered = assign_orders(graph, dem)
    doc = graph_to_geojson(ordered, metadata={"elevation_sampling": "segment-endpoints"})
    write_geojson(doc, args.out)
    _log_stage("order", started, segments=len(ordered.segments))
    return 0


def _evaluation_points(graph):
    points = []
    for seg in graph.segments:
        if len(seg.points) < 2:
            continue
        if seg.order < 1:
            raise InputError(
                f"segment {seg.id} has no stream order; run the order stage first"
            )
        category = order_category(seg.order)
        points.extend((p, category) for p in inner_points(seg))
    if not points:
        raise InputError("candidate graph yields no evaluation points")
    return points


def _write_hits_csv(hits: dict[str, tuple[int, int]], threshold: float, path) -> None:
    lines = ["category,hits,total,fraction"]
    for category in ("O1", "O2", "O3plus", "all"):
        if category in hits:
            h, n = hits[category]
            lines.append(f"{category},{h},{n},{h / n:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _evaluate(candidate_path, reference_path, threshold: float, summary_out, hits_out, jobs: int):
    graph = read_graph_geojson(_require_file(candidate_path))
    references = load_polylines_geojson(_read_json(reference_path))
    points = _evaluation_points(graph)
    index = ReferenceIndex(references, bucket_size=threshold)
    hits = hit_rate(points, index, threshold, jobs)
    summary = distance_summary(points, index, jobs)
    write_summary_csv(summary, summary_out)
    if hits_out:
        _write_hits_csv(hits, threshold, hits_out)
    return points, hits


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    points, hits = _evaluate(
        args.candidate, args.reference, args.threshold, args.summary_out, args.hits_out, args.jobs
    )
    for category in ("O1", "O2", "O3plus", "all"):
        if category in hits:
            h, n = hits[category]
            print(f"hit_rate {category} {h}/{n} = {h / n:.6f}")
    _log_stage("evaluate", started, points=len(points))
    return 0


def cmd_recall(args) -> int:
    started = time.perf_counter()
    requests = load_requests_csv(_require_file(args.requests))
    waterways = load_polylines_geojson(_read_json(args.waterways))
    recalls = recall_requests(requests, waterways, args.threshold, args.jobs)
    print("country,captured,total,fraction")
    for country in sorted(recalls):
        captured, total = recalls[country]
        print(f"{country},{captured},{total},{captured / total:.6f}")
    _log_stage("recall", started, requests=len(requests), countries=len(recalls))
    return 0


PIPELINE_KEYS = ("mask", "dem", "reference", "threshold", "eval_threshold", "out_dir")


def _load_config(path: Path) -> dict[str, str]:
    config: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in PIPELINE_KEYS:
            raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
        config[key] = value.strip()
    return config


def cmd_pipeline(args) -> int:
    config_path = _require_file(args.config)
    config = _load_config(config_path)
    root = config_path.parent

    def setting(key: str, override, default=None):
        if override is not None:
            return override
        if key in config:
            return config[key]
        if default is not None:
            return default
        raise InputError(f"pipeline config is missing {key!r} and no --{key.replace('_', '-')} given")

    mask_path = root / setting("mask", args.mask)
    dem_path = root / setting("dem", args.dem)
    reference_path = root / setting("reference", args.reference)
    threshold = float(setting("threshold", args.threshold, "0.5"))
    eval_threshold = float(setting("eval_threshold", args.eval_threshold, str(DEFAULT_REQUEST_THRESHOLD)))
    out_dir = Path(setting("out_dir", args.out_dir))
    if not out_dir.is_absolute():
        out_dir = root / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    mask, result = _thin(mask_path, dem_path, threshold)
    skeleton_path = out_dir / "skeleton.asc"
    write_ascii_grid(result.skeleton, skeleton_path)
    _log_stage(
        "thin",
        started,
        cells_in=int(mask.data.sum()),
        cells_out=int(result.skeleton.data.sum()),
    )

    started = time.perf_counter()
    graph = skeleton_to_graph(result.skeleton)
    _log_stage("vectorize", started, nodes=len(graph.nodes), segments=len(graph.segments))

    started = time.perf_counter()
    dem = _read_grid(dem_path)
    ordered = assign_orders(graph, dem)
    graph_path = out_dir / "waterways.geojson"
    write_geojson(
        graph_to_geojson(ordered, metadata={"elevation_sampling": "segment-endpoints"}),
        graph_path,
    )
    _log_stage("order", started, segments=len(ordered.segments))

    started = time.perf_counter()
    points, _hits = _evaluate(
        graph_path,
        reference_path,
        eval_threshold,
        out_dir / "summary.csv",
        out_dir / "hits.csv",
        args.jobs,
    )
    _log_stage("evaluate", started, points=len(points))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="waterways", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"waterways {__version__} "
            f"(formats: ascii-grid v{ASCII_GRID_FORMAT_VERSION}, "
            f"waterway-geojson v{GEOJSON_FORMAT_VERSION}, "
            f"summary-csv v{SUMMARY_FORMAT_VERSION})"
        ),
    )
    parser.add_argument(
        "--jobs",
        type=int,
        default=os.cpu_count() or 1,
        help="maximum worker threads for evaluation queries (results do not depend on it)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("composite", help="assemble a cloud-free composite from a tile manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bbox", required=True, type=_bbox, help="lonmin,latmin,lonmax,latmax")
    p.add_argument("--threshold", type=float, default=CLOUD_THRESHOLD, help="stop once uncovered fraction <= this")
    p.add_argument("--buffer-m", type=float, default=BUFFER_METERS, help="metric buffer around invalid cells")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("features", help="derive the 10-channel model input stack")
    p.add_argument("--nrgb", nargs=4, required=True, metavar=("NIR", "RED", "GREEN", "BLUE"))
    p.add_argument("--dem", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("rasterize-labels", help="burn typed label vectors onto a grid")
    p.add_argument("--geojson", required=True)
    p.add_argument("--like", required=True, help="grid whose lattice the labels adopt")
    p.add_argument("--weights", help="type weight config (defaults embedded)")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_rasterize_labels)

    p = sub.add_parser("thin", help="thin a probability or binary mask to a skeleton")
    p.add_argument("--mask", required=True)
    p.add_argument("--dem", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_thin)

    p = sub.add_parser("vectorize", help="trace a skeleton into waterway segments")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("order", help="assign stream orders to a waterway graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--dem", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("evaluate", help="distance metrics of a candidate graph against references")
    p.add_argument("--candidate", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_REQUEST_THRESHOLD)
    p.add_argument("--summary-out", required=True)
    p.add_argument("--hits-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recall", help="per-country capture rate of request points")
    p.add_argument("--requests", required=True)
    p.add_argument("--waterways", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_REQUEST_THRESHOLD)
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("pipeline", help="thin, vectorize, order and evaluate from one config")
    p.add_argument("--config", required=True)
    p.add_argument("--mask")
    p.add_argument("--dem")
    p.add_argument("--reference")
    p.add_argument("--threshold")
    p.add_argument("--eval-threshold", dest="eval_threshold")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except (InputError, ValueError, KeyError, OSError) as err:
        print(f"waterways: error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001
        print(f"waterways: internal error: {err!r}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
