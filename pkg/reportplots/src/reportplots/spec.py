"""Plot request schema: what to draw, from which exported files.

This package is a pure consumer: every number that ends up on an axis
is read verbatim from a CSV cell (or, for solver traces, from the JSON
sidecar the design CLI writes) and never recomputed. This module only
defines and validates the request; the drawing lives in figures.py.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

KINDS = ("learning", "sensing", "pareto", "convergence", "ssl")

# Columns each figure kind reads, kept as literals so schema drift in
# the exporting package fails loudly here instead of drawing nonsense.
# The learning kind's metric column can be overridden per spec; the
# convergence kind reads the "objective_trace" key of a JSON sidecar
# instead of CSV columns.
REQUIRED_COLUMNS = {
    "learning": ("round", "task_accuracy", "baseline_name", "seed"),
    "sensing": ("round", "sensing_mse", "crb_l", "baseline_name", "seed"),
    "pareto": ("crb_l", "mse"),
    "convergence": (),
    "ssl": ("M", "centralized", "distributed"),
}

IMAGE_SUFFIXES = (".png", ".svg")


class PlotSpecError(ValueError):
    """The request or its input files violate the contract."""


class MissingColumnError(PlotSpecError):
    """An input file lacks columns (or keys) the figure kind needs."""


@dataclass(frozen=True)
class PlotSpec:
    """One figure: kind, input metric files, output image, style knobs.

    logy=None means "use the kind's default scale"; y_column overrides
    the metric column of the learning kind only (e.g. "task_loss").
    """

    kind: str
    inputs: tuple[str, ...]
    out: str
    title: str | None = None
    dpi: int = 100
    logy: bool | None = None
    y_column: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotSpecError(
                f"unknown figure kind '{self.kind}', expected one of {KINDS}")
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        if not self.inputs:
            raise PlotSpecError("a plot needs at least one input file")
        suffix = Path(self.out).suffix.lower()
        if suffix not in IMAGE_SUFFIXES:
            raise PlotSpecError(
                f"output '{self.out}' must end in one of {IMAGE_SUFFIXES}")
        if not isinstance(self.dpi, int) or isinstance(self.dpi, bool) \
                or self.dpi < 1:
            raise PlotSpecError(f"dpi must be a positive integer, got {self.dpi!r}")
        if self.logy is not None and not isinstance(self.logy, bool):
            raise PlotSpecError(f"logy must be true, false or null, got {self.logy!r}")
        if self.y_column is not None and self.kind != "learning":
            raise PlotSpecError("y_column only applies to the learning kind")


def spec_from_json(path) -> PlotSpec:
    """Load a PlotSpec from a JSON document; unknown keys are rejected."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise PlotSpecError(f"cannot read spec '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PlotSpecError(f"spec '{path}' is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PlotSpecError(f"spec '{path}' must be a JSON object")
    known = {"kind", "inputs", "out", "title", "dpi", "logy", "y_column"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise PlotSpecError(f"spec '{path}' has unknown keys {unknown}")
    for key in ("kind", "inputs", "out"):
        if key not in doc:
            raise PlotSpecError(f"spec '{path}' lacks required key '{key}'")
    inputs = doc["inputs"]
    if isinstance(inputs, str) or not isinstance(inputs, (list, tuple)):
        raise PlotSpecError(f"spec '{path}': inputs must be a list of paths")
    return PlotSpec(kind=doc["kind"], inputs=tuple(inputs), out=doc["out"],
                    title=doc.get("title"), dpi=doc.get("dpi", 100),
                    logy=doc.get("logy"), y_column=doc.get("y_column"))
