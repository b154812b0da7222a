"""Plain-text ESRI ASCII grid reader/writer with byte-exact round trips.

Header carries ncols, nrows, xllcorner, yllcorner, cellsize and (when a
sentinel exists) NODATA_value. Data rows run north to south, matching row
order in memory. Values are written with the shortest decimal representation
that parses back to the identical float, so write -> read -> write is stable
byte for byte.

The top-left anchor latitude is reconstructed from yllcorner in exact decimal
arithmetic; binary rounding of ``yll + nrows * cellsize`` would otherwise
drift by an ulp and break round trips.
"""

from __future__ import annotations

import re
from decimal import Decimal, localcontext
from pathlib import Path

import numpy as np

from .grid import GeoGrid, GeoTransform

_INT_RE = re.compile(r"^[+-]?\d+$")

# Enough digits that sums of float-sized decimals (17 significant digits,
# exponents down to 1e-324) stay exact instead of rounding to the default
# 28-digit context.
_EXACT_DIGITS = 800


def _fmt_float(value: float) -> str:
    return repr(float(value))


def _fmt_decimal(value: Decimal) -> str:
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text if text not in ("", "-") else "0"


def _fmt_value(value, integer: bool) -> str:
    return str(int(value)) if integer else _fmt_float(value)


def write_ascii_grid(grid: GeoGrid, path: str | Path) -> None:
    t = grid.transform
    with localcontext() as ctx:
        ctx.prec = _EXACT_DIGITS
        yll = Decimal(repr(t.origin_lat)) - t.n_rows * Decimal(repr(t.cell_size))
    integer = np.issubdtype(grid.data.dtype, np.integer)
    lines = [
        f"ncols {t.n_cols}",
        f"nrows {t.n_rows}",
        f"xllcorner {_fmt_float(t.origin_lon)}",
        f"yllcorner {_fmt_decimal(yll)}",
        f"cellsize {_fmt_float(t.cell_size)}",
    ]
    if grid.nodata is not None:
        lines.append(f"NODATA_value {_fmt_value(grid.nodata, integer)}")
    for row in grid.data:
        lines.append(" ".join(_fmt_value(v, integer) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ascii_grid(path: str | Path) -> GeoGrid:
    tokens = Path(path).read_text(encoding="ascii").split()
    header: dict[str, str] = {}
    pos = 0
    while pos + 1 < len(tokens) and tokens[pos].replace("_", "").isalpha():
        header[tokens[pos].lower()] = tokens[pos + 1]
        pos += 2

    missing = [k for k in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize") if k not in header]
    if missing:
        raise ValueError(f"{path}: missing header keys {missing}")
    n_cols = int(header["ncols"])
    n_rows = int(header["nrows"])
    cell_size = float(header["cellsize"])
    with localcontext() as ctx:
        ctx.prec = _EXACT_DIGITS
        origin_lat = float(Decimal(header["yllcorner"]) + n_rows * Decimal(header["cellsize"]))
    transform = GeoTransform(
        origin_lon=float(header["xllcorner"]),
        origin_lat=origin_lat,
        cell_size=cell_size,
        n_rows=n_rows,
        n_cols=n_cols,
    )

    values = tokens[pos:]
    if len(values) != n_rows * n_cols:
        raise ValueError(
            f"{path}: expected {n_rows * n_cols} cell values, found {len(values)}"
        )
    nodata_text = header.get("nodata_value")
    integer = all(_INT_RE.match(v) for v in values) and (
        nodata_text is None or _INT_RE.match(nodata_text)
    )
    dtype = np.int64 if integer else np.float64
    data = np.array(values, dtype=dtype).reshape(n_rows, n_cols)
    nodata = None
    if nodata_text is not None:
        nodata = int(nodata_text) if integer else float(nodata_text)
    return GeoGrid(transform, data, nodata=nodata)
