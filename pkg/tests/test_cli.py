"""Command line plumbing: exit codes, help, version, and stage wiring."""

import json
import math

import numpy as np
import pytest

from waterways.ascii_grid import read_ascii_grid, write_ascii_grid
from waterways.cli import main

from .helpers import make_grid

SUBCOMMANDS = (
    "composite",
    "features",
    "rasterize-labels",
    "thin",
    "vectorize",
    "order",
    "evaluate",
    "recall",
    "pipeline",
)

# Y-shaped channel on a 12x12 grid: trunk down column 5, two arms
Y_CELLS = (
    [(r, 5) for r in range(6)]
    + [(6, 4), (7, 3), (8, 2)]
    + [(6, 6), (7, 7), (8, 8)]
)


def _center(r, c):
    return (30.0 + (c + 0.5) * 0.001, 1.0 - (r + 0.5) * 0.001)


def _write_fixture(root):
    prob = np.full((12, 12), 0.05)
    for r, c in Y_CELLS:
        prob[r, c] = 0.9
    write_ascii_grid(make_grid(prob), root / "mask.asc")

    dem = np.tile(np.arange(12, dtype=float)[:, None], (1, 12))
    write_ascii_grid(make_grid(dem), root / "dem.asc")

    reference = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [list(_center(0, 5)), list(_center(5, 5))],
                },
                "properties": {},
            }
        ],
    }
    (root / "reference.geojson").write_text(json.dumps(reference))

    (root / "requests.csv").write_text(
        "lon,lat,country,service\n"
        f"{_center(2, 5)[0]},{_center(2, 5)[1]},ke,sms\n"
        "30.1,0.9,ke,\n"
        f"{_center(3, 5)[0] + 0.0001},{_center(3, 5)[1]},ug,app\n"
    )


@pytest.fixture()
def fixture_dir(tmp_path):
    _write_fixture(tmp_path)
    return tmp_path


def test_help_exits_zero_for_every_subcommand(capsys):
    for args in ([], *([cmd] for cmd in SUBCOMMANDS)):
        with pytest.raises(SystemExit) as excinfo:
            main([*args, "--help"])
        assert excinfo.value.code == 0
        assert "usage" in capsys.readouterr().out


def test_version_string(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert capsys.readouterr().out == (
        "waterways 0.1.0 (formats: ascii-grid v1, waterway-geojson v1, summary-csv v1)\n"
    )


def test_missing_input_file_exits_one_and_names_path(tmp_path, capsys):
    out = tmp_path / "skeleton.asc"
    code = main(
        ["thin", "--mask", "no-such-mask.asc", "--dem", "also-missing.asc", "--out", str(out)]
    )
    assert code == 1
    err = capsys.readouterr().err
    assert "no-such-mask.asc" in err
    assert not out.exists()


def test_unknown_flag_exits_one():
    with pytest.raises(SystemExit) as excinfo:
        main(["vectorize", "--bogus", "x"])
    assert excinfo.value.code == 1


def test_missing_subcommand_exits_one():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 1


def test_thin_vectorize_order_evaluate_chain(fixture_dir, capsys):
    root = fixture_dir
    assert (
        main(
            [
                "thin",
                "--mask",
                str(root / "mask.asc"),
                "--dem",
                str(root / "dem.asc"),
                "--threshold",
                "0.5",
                "--out",
                str(root / "skeleton.asc"),
            ]
        )
        == 0
    )
    skeleton = read_ascii_grid(root / "skeleton.asc")
    expected = np.zeros((12, 12), dtype=int)
    for r, c in Y_CELLS:
        expected[r, c] = 1
    assert np.array_equal(skeleton.data, expected)  # the Y is already unit width

    assert (
        main(
            [
                "vectorize",
                "--skeleton",
                str(root / "skeleton.asc"),
                "--out",
                str(root / "graph.geojson"),
            ]
        )
        == 0
    )
    graph_doc = json.loads((root / "graph.geojson").read_text())
    assert len(graph_doc["features"]) == 3
    assert all(f["properties"]["stream_order"] == -1 for f in graph_doc["features"])

    assert (
        main(
            [
                "order",
                "--graph",
                str(root / "graph.geojson"),
                "--dem",
                str(root / "dem.asc"),
                "--out",
                str(root / "ordered.geojson"),
            ]
        )
        == 0
    )
    ordered_doc = json.loads((root / "ordered.geojson").read_text())
    orders = sorted(f["properties"]["stream_order"] for f in ordered_doc["features"])
    assert orders == [1, 1, 2]  # two headwater arms meet; the trunk is order 2

    capsys.readouterr()
    assert (
        main(
            [
                "evaluate",
                "--candidate",
                str(root / "ordered.geojson"),
                "--reference",
                str(root / "reference.geojson"),
                "--summary-out",
                str(root / "summary.csv"),
                "--hits-out",
                str(root / "hits.csv"),
            ]
        )
        == 0
    )
    out = capsys.readouterr().out
    # trunk inner points sit on the reference; each arm has one inner point
    # within sqrt(2) cells of the trunk and one farther away
    assert (root / "hits.csv").read_text() == (
        "category,hits,total,fraction\n"
        "O1,2,4,0.500000\n"
        "O2,4,4,1.000000\n"
        "all,6,8,0.750000\n"
    )
    assert "hit_rate all 6/8 = 0.750000" in out

    summary_rows = (root / "summary.csv").read_text().splitlines()
    assert summary_rows[0] == "Stream Order,1,2,3,all"
    assert summary_rows[1] == "Count,4,4,,8"
    mean_cells = summary_rows[2].split(",")
    assert mean_cells[0] == "Mean" and mean_cells[2] == "0.00"


def test_evaluate_requires_orders(fixture_dir, capsys):
    root = fixture_dir
    main(
        [
            "thin",
            "--mask",
            str(root / "mask.asc"),
            "--dem",
            str(root / "dem.asc"),
            "--out",
            str(root / "skeleton.asc"),
        ]
    )
    main(
        [
            "vectorize",
            "--skeleton",
            str(root / "skeleton.asc"),
            "--out",
            str(root / "graph.geojson"),
        ]
    )
    capsys.readouterr()
    code = main(
        [
            "evaluate",
            "--candidate",
            str(root / "graph.geojson"),
            "--reference",
            str(root / "reference.geojson"),
            "--summary-out",
            str(root / "summary.csv"),
        ]
    )
    assert code == 1
    assert "run the order stage first" in capsys.readouterr().err


def test_recall_prints_per_country_fractions(fixture_dir, capsys):
    root = fixture_dir
    code = main(
        [
            "recall",
            "--requests",
            str(root / "requests.csv"),
            "--waterways",
            str(root / "reference.geojson"),
        ]
    )
    assert code == 0
    assert capsys.readouterr().out == (
        "country,captured,total,fraction\n"
        "ke,1,2,0.500000\n"
        "ug,1,1,1.000000\n"
    )


def test_rasterize_labels_outputs(fixture_dir):
    root = fixture_dir
    labels_doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [list(_center(10, 1)), list(_center(10, 3))],
                },
                "properties": {"waterway_type": "Perennial Streams"},
            },
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [
                        [
                            [30.008, 0.997],
                            [30.010, 0.997],
                            [30.010, 0.999],
                            [30.008, 0.999],
                            [30.008, 0.997],
                        ]
                    ],
                },
                "properties": {"waterway_type": "Lake"},
            },
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [list(_center(0, 0)), list(_center(0, 2))],
                },
                "properties": {"waterway_type": "drainage"},
            },
        ],
    }
    (root / "labels.geojson").write_text(json.dumps(labels_doc))
    code = main(
        [
            "rasterize-labels",
            "--geojson",
            str(root / "labels.geojson"),
            "--like",
            str(root / "dem.asc"),
            "--out",
            str(root / "lbl"),
        ]
    )
    assert code == 0
    target = read_ascii_grid(root / "lbl_target.asc").data
    weight = read_ascii_grid(root / "lbl_weight.asc").data
    assert target[10, 2] == 1 and weight[10, 2] == 3.25  # stream line cell
    assert target[1, 8] == 1 and weight[1, 8] == 3.25  # lake interior cell
    assert target[0, 1] == 0 and weight[0, 1] == 0.0  # masked drainage cell
    assert target[6, 0] == 0 and weight[6, 0] == 1.0  # background cell


def test_features_outputs(fixture_dir):
    root = fixture_dir
    rng = np.random.default_rng(3)
    bands = {}
    for name in ("nir", "red", "green", "blue"):
        bands[name] = rng.uniform(0.1, 0.9, size=(12, 12))
        write_ascii_grid(make_grid(bands[name]), root / f"{name}.asc")
    code = main(
        [
            "features",
            "--nrgb",
            str(root / "nir.asc"),
            str(root / "red.asc"),
            str(root / "green.asc"),
            str(root / "blue.asc"),
            "--dem",
            str(root / "dem.asc"),
            "--out",
            str(root / "feat"),
        ]
    )
    assert code == 0
    names = [
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
    ]
    for name in names:
        assert (root / f"feat_{name}.asc").is_file()
    ndvi = read_ascii_grid(root / "feat_ndvi.asc").data
    expected = (bands["nir"][4, 4] - bands["red"][4, 4]) / (
        bands["nir"][4, 4] + bands["red"][4, 4]
    )
    assert ndvi[4, 4] == pytest.approx(expected, rel=1e-12)


def test_composite_from_manifest(fixture_dir):
    root = fixture_dir
    rng = np.random.default_rng(9)
    names = []
    for band in ("nir", "red", "green", "blue"):
        path = root / f"t1_{band}.asc"
        write_ascii_grid(make_grid(rng.uniform(0.0, 1.0, size=(12, 12))), path)
        names.append(path.name)
    write_ascii_grid(
        make_grid(np.zeros((12, 12), dtype=np.uint8)), root / "t1_invalid.asc"
    )
    (root / "tiles.txt").write_text(f"t1 {' '.join(names)} t1_invalid.asc\n")
    code = main(
        [
            "composite",
            "--manifest",
            str(root / "tiles.txt"),
            "--bbox",
            "30.0,0.988,30.012,1.0",
            "--out",
            str(root / "comp"),
        ]
    )
    assert code == 0
    for band in ("nir", "red", "green", "blue"):
        grid = read_ascii_grid(root / f"comp_{band}.asc")
        assert grid.data.shape == (12, 12)
        assert grid.data.min() >= 0 and grid.data.max() <= 255
    coverage = read_ascii_grid(root / "comp_coverage.asc")
    assert (coverage.data == 1).all()


def _pipeline_config(root, out_dir="out"):
    config = root / "pipeline.cfg"
    config.write_text(
        "# minimal watershed pipeline\n"
        "mask = mask.asc\n"
        "dem = dem.asc\n"
        "reference = reference.geojson\n"
        "threshold = 0.5\n"
        "eval_threshold = 0.002\n"
        f"out_dir = {out_dir}\n"
    )
    return config


def test_pipeline_runs_and_is_deterministic(fixture_dir):
    root = fixture_dir
    config = _pipeline_config(root)
    assert main(["pipeline", "--config", str(config)]) == 0
    artifacts = ["skeleton.asc", "waterways.geojson", "summary.csv", "hits.csv"]
    first = {name: (root / "out" / name).read_bytes() for name in artifacts}
    assert main(["pipeline", "--config", str(config)]) == 0
    for name in artifacts:
        assert (root / "out" / name).read_bytes() == first[name]

    doc = json.loads(first["waterways.geojson"].decode())
    assert sorted(f["properties"]["stream_order"] for f in doc["features"]) == [1, 1, 2]
    assert first["hits.csv"].decode().splitlines()[-1] == "all,6,8,0.750000"


def test_pipeline_flags_override_config(fixture_dir):
    root = fixture_dir
    config = _pipeline_config(root)
    assert (
        main(["pipeline", "--config", str(config), "--out-dir", str(root / "elsewhere")])
        == 0
    )
    assert (root / "elsewhere" / "summary.csv").is_file()
    assert not (root / "out").exists()


def test_pipeline_rejects_unknown_config_key(fixture_dir, capsys):
    root = fixture_dir
    config = root / "bad.cfg"
    config.write_text("mask = mask.asc\nbogus = 1\n")
    assert main(["pipeline", "--config", str(config)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_pipeline_reports_missing_setting(fixture_dir, capsys):
    root = fixture_dir
    config = root / "partial.cfg"
    config.write_text("mask = mask.asc\ndem = dem.asc\nout_dir = out\n")
    assert main(["pipeline", "--config", str(config)]) == 1
    assert "reference" in capsys.readouterr().err
