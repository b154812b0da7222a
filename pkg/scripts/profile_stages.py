#!/usr/bin/env python3
"""Time each pipeline stage on the shipped watershed fixture.

Runs the ``pipeline`` command end to end several times (a cold interpreter
per run), parses the per-stage wall-time log lines, and prints min / median
/ max seconds per stage plus the total process time. Useful for spotting
regressions after touching the thinning or evaluation hot paths.

Usage: python3 scripts/profile_stages.py [--runs 5] [--config PATH]
"""

from __future__ import annotations

import argparse
import re
import statistics
import subprocess
import sys
import tempfile
import time
from pathlib import Path

STAGE_LINE = re.compile(r"^stage=(\w+) wall_s=([0-9.]+)")
DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "fixtures" / "watershed" / "pipeline.cfg"


def run_once(config: Path, out_dir: Path) -> tuple[dict[str, float], float]:
    started = time.perf_counter()
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "waterways",
            "pipeline",
            "--config",
            str(config),
            "--out-dir",
            str(out_dir),
        ],
        capture_output=True,
        text=True,
    )
    total = time.perf_counter() - started
    if proc.returncode != 0:
        raise SystemExit(f"pipeline failed with code {proc.returncode}:\n{proc.stderr}")
    stages = {}
    for line in proc.stderr.splitlines():
        match = STAGE_LINE.match(line.strip())
        if match:
            stages[match.group(1)] = float(match.group(2))
    if not stages:
        raise SystemExit("no stage timing lines found in pipeline output")
    return stages, total


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        description="Time each pipeline stage on the shipped fixture."
    )
    parser.add_argument("--runs", type=int, default=5, help="number of repetitions")
    parser.add_argument(
        "--config", type=Path, default=DEFAULT_CONFIG, help="pipeline config to run"
    )
    args = parser.parse_args(argv)
    if args.runs < 1:
        parser.error("--runs must be at least 1")

    samples: dict[str, list[float]] = {}
    totals = []
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(args.runs):
            stages, total = run_once(args.config, Path(tmp) / f"run{i}")
            totals.append(total)
            for stage, seconds in stages.items():
                samples.setdefault(stage, []).append(seconds)

    width = max(len(stage) for stage in samples)
    print(f"{'stage':<{width}}  {'min_s':>7}  {'med_s':>7}  {'max_s':>7}")
    for stage, values in samples.items():
        print(
            f"{stage:<{width}}  {min(values):>7.3f}  "
            f"{statistics.median(values):>7.3f}  {max(values):>7.3f}"
        )
    print(
        f"\nprocess total: median {statistics.median(totals):.3f} s "
        f"over {args.runs} run(s), fixture {args.config}"
    )


if __name__ == "__main__":
    main()
