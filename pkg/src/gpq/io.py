"""CSV/JSON/TOML input and output.

Floats are written with 17 significant digits so every emitted value
parses back to the identical double. Error messages name the file and,
where it applies, the line number (the header is line 1) and column.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgument

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MAX_FILL = 5


def fmt(value) -> str:
    """Lossless text form of a number (``.17g``); other values via ``str``."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, np.datetime64):
        return str(np.datetime_as_string(value, unit="D"))
    return str(value)


def write_csv(target, header, rows) -> None:
    """Write ``rows`` under ``header`` to a path or an open text stream."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])

    if hasattr(target, "write"):
        emit(target)
    else:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.datetime64):
        return fmt(obj)
    return obj


def dump_json(obj) -> str:
    """Deterministic JSON (sorted keys); Python's float repr is already lossless."""
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dump_json(obj), encoding="utf-8")


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError("file not found", path=path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", path=path, row=exc.lineno) from None


def _read_rows(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError("file not found", path=path) from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError("file is empty", path=path)
    return rows


def _parse_date(text, path, line):
    try:
        return np.datetime64(dt.date.fromisoformat(text.strip()), "D")
    except ValueError:
        raise DataError(f"cannot read date {text!r}", path=path, row=line, column="date") from None


def _parse_float(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"cannot read number {text!r}", path=path, row=line, column=column) from None
    if not math.isfinite(value):
        raise DataError("non-finite number", path=path, row=line, column=column)
    return value


class PanelTable:
    """Raw parsed panel: dates, column names, values with NaN outside live ranges."""

    def __init__(self, dates, columns, values, fills):
        self.dates = dates
        self.columns = columns
        self.values = values
        self.fills = fills


def read_panel(path, *, max_fill: int = MAX_FILL) -> PanelTable:
    """Parse ``date,COL1,COL2,...`` with ISO dates and decimal values.

    Blank cells before a column's first value or after its last value mark
    the series as not live (NaN). Interior gaps are forward-filled when at
    most ``max_fill`` consecutive cells are missing; longer gaps are an
    error. ``fills`` counts filled cells per column.
    """
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "date":
        raise DataError("header must be 'date,<column>,...'", path=path, row=1)
    columns = header[1:]
    if len(set(columns)) != len(columns) or any(not c for c in columns):
        raise DataError("column names must be unique and non-empty", path=path, row=1)
    dates, values = [], []
    for k, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", path=path, row=k)
        d = _parse_date(row[0], path, k)
        if dates and d <= dates[-1][0]:
            raise DataError("dates must be strictly increasing", path=path, row=k, column="date")
        dates.append((d, k))
        values.append([
            math.nan if not cell.strip() else _parse_float(cell, path, k, col)
            for cell, col in zip(row[1:], columns)
        ])
    if not dates:
        raise DataError("no data rows", path=path)
    V = np.array(values, dtype=float).reshape(len(dates), len(columns))
    lines = [k for _, k in dates]
    fills = {}
    for j, col in enumerate(columns):
        present = np.flatnonzero(np.isfinite(V[:, j]))
        fills[col] = 0
        if present.size == 0:
            continue
        gap = 0
        for i in range(present[0] + 1, present[-1]):
            if math.isnan(V[i, j]):
                gap += 1
                if gap > max_fill:
                    raise DataError(
                        f"more than {max_fill} consecutive missing values", path=path,
                        row=lines[i], column=col,
                    )
                V[i, j] = V[i - 1, j]
                fills[col] += 1
            else:
                gap = 0
    return PanelTable(np.array([d for d, _ in dates]), columns, V, fills)


def load_panel(path, kind: str = "prices", *, max_fill: int = MAX_FILL):
    """Read a panel CSV as a ``PricePanel`` (``kind="prices"``) or ``RatePanel`` (``"rates"``).

    Returns ``(panel, fills)``.
    """
    from .curves import RatePanel
    from .strategy import PricePanel

    table = read_panel(path, max_fill=max_fill)
    if kind == "prices":
        bad = np.isfinite(table.values) & (table.values <= 0)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise DataError("prices must be positive", path=path, row=int(i) + 2,
                            column=table.columns[j])
        return PricePanel(table.dates, table.columns, table.values), table.fills
    if kind == "rates":
        missing = ~np.isfinite(table.values)
        if np.any(missing):
            i, j = np.argwhere(missing)[0]
            raise DataError("rate panels may not have missing values", path=path, row=int(i) + 2,
                            column=table.columns[j])
        return RatePanel(table.dates, table.columns, table.values), table.fills
    raise InvalidArgument(f"unknown panel kind {kind!r}")


def read_table(path, *, min_columns: int = 1):
    """Numeric CSV with a header row; returns ``(header, values)``."""
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if len(header) < min_columns:
        raise DataError(f"need at least {min_columns} columns", path=path, row=1)
    data = []
    for k, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", path=path, row=k)
        data.append([_parse_float(c, path, k, h) for c, h in zip(row, header)])
    if not data:
        raise DataError("no data rows", path=path)
    return header, np.array(data, dtype=float)


def read_records(path):
    """CSV as ``(header, [(line, {column: text}), ...])`` without type conversion."""
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    out = []
    for k, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", path=path, row=k)
        out.append((k, dict(zip(header, row))))
    return header, out


def load_snapshot(path):
    """Two-column curve CSV ``maturity,rate``; maturities as years or labels like ``3M``/``2Y``."""
    from .curves import CurveSnapshot, parse_maturity

    rows = _read_rows(path)
    mats, rates = [], []
    for k, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DataError("expected 'maturity,rate'", path=path, row=k)
        try:
            mats.append(parse_maturity(row[0]))
        except DataError as exc:
            raise DataError(str(exc), path=path, row=k, column="maturity") from None
        rates.append(_parse_float(row[1], path, k, "rate"))
    if len(mats) < 2:
        raise DataError("need at least two tenors", path=path)
    if np.any(np.diff(mats) <= 0):
        raise DataError("maturities must be strictly increasing", path=path)
    return CurveSnapshot(None, np.array(mats), np.array(rates))


def read_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError("config file not found", path=path) from None
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"invalid config: {exc}", path=path) from None
