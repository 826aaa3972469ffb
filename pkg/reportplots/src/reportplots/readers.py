"""Readers for the exported metric files.

Cells come back as the raw strings from the file; the figure builders
convert with float() where a number is plotted, so values round-trip
exactly (the exporter writes shortest round-trip decimals). A header-
only CSV is valid input and yields empty columns.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .spec import MissingColumnError, PlotSpecError


def read_columns(path, needed, kind: str) -> dict[str, list[str]]:
    """The needed columns of one CSV, as lists of raw cell strings.

    The column check binds on the header alone, so schema violations
    surface even for files with no data rows.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            header = reader.fieldnames
            if header is None:
                raise MissingColumnError(
                    f"'{path}' is empty; a {kind} figure needs columns "
                    f"{sorted(needed)}")
            missing = sorted(set(needed) - set(header))
            if missing:
                raise MissingColumnError(
                    f"'{path}' lacks columns {missing} needed for a "
                    f"{kind} figure")
            rows = list(reader)
    except OSError as exc:
        raise PlotSpecError(f"cannot read '{path}': {exc}") from exc
    return {name: [row[name] for row in rows] for name in needed}


def read_trace(path) -> list[float]:
    """The solver's objective trace from a design-run JSON sidecar."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise PlotSpecError(f"cannot read '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PlotSpecError(f"'{path}' is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "objective_trace" not in doc:
        raise MissingColumnError(
            f"'{path}' lacks the key 'objective_trace' needed for a "
            f"convergence figure")
    trace = doc["objective_trace"]
    if not isinstance(trace, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float))
            for v in trace):
        raise PlotSpecError(
            f"'{path}': objective_trace must be a list of numbers")
    return [float(v) for v in trace]
