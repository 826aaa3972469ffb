"""Batch figure generation from exported metric files.

Strictly a consumer of the simulator's CSV/JSON exports: nothing here
recomputes a metric, so a figure is a faithful view of its input files.
"""

from .figures import DEFAULT_LOGY, build_figure, render
from .spec import (
    KINDS,
    REQUIRED_COLUMNS,
    MissingColumnError,
    PlotSpec,
    PlotSpecError,
    spec_from_json,
)

__all__ = [
    "DEFAULT_LOGY",
    "KINDS",
    "REQUIRED_COLUMNS",
    "MissingColumnError",
    "PlotSpec",
    "PlotSpecError",
    "build_figure",
    "render",
    "spec_from_json",
]
