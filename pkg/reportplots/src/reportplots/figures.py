"""Figure builders: one per kind, plus render() to write the image.

The Agg backend is forced before pyplot loads so the tool runs headless,
and the SVG id salt is pinned so repeated renders of the same spec are
byte-identical. Builders put data on the axes exactly as read: lines and
bars carry unmodified CSV columns (pareto reorders its points by the
bound column, which permutes pairs without changing any value). Empty
inputs draw no artists but still label the axes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "reportplots"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .readers import read_columns, read_trace  # noqa: E402
from .spec import PlotSpec, PlotSpecError  # noqa: E402

# Kinds whose values span decades default to a log scale; a spec's
# explicit logy wins either way.
DEFAULT_LOGY = {
    "learning": False,
    "sensing": True,
    "pareto": False,
    "convergence": True,
    "ssl": True,
}


def _floats(cells) -> np.ndarray:
    return np.array([float(cell) for cell in cells], dtype=float)


def _series_groups(columns) -> dict[tuple[str, str], list[int]]:
    """Row indices per (baseline_name, seed), in first-appearance order."""
    groups: dict[tuple[str, str], list[int]] = {}
    for idx, tag in enumerate(zip(columns["baseline_name"], columns["seed"])):
        groups.setdefault(tag, []).append(idx)
    return groups


def _label(prefix: str, name: str, seed: str) -> str:
    return f"{prefix}{name} seed {seed}"


def _round_curves(spec: PlotSpec, ax, y_col: str, with_bound: bool) -> None:
    needed = ("round", y_col, "baseline_name", "seed")
    if with_bound:
        needed += ("crb_l",)
    for path in spec.inputs:
        cols = read_columns(path, needed, spec.kind)
        prefix = f"{Path(path).stem}:" if len(spec.inputs) > 1 else ""
        for (name, seed), idx in _series_groups(cols).items():
            rounds = _floats([cols["round"][i] for i in idx])
            ax.plot(rounds, _floats([cols[y_col][i] for i in idx]),
                    label=_label(prefix, name, seed))
            if with_bound:
                ax.plot(rounds, _floats([cols["crb_l"][i] for i in idx]),
                        linestyle="--",
                        label=_label(prefix, name, seed) + " bound")
    ax.set_xlabel("round")
    ax.set_ylabel(y_col.replace("_", " "))


def _learning(spec: PlotSpec, ax) -> None:
    _round_curves(spec, ax, spec.y_column or "task_accuracy", with_bound=False)


def _sensing(spec: PlotSpec, ax) -> None:
    _round_curves(spec, ax, "sensing_mse", with_bound=True)


def _pareto(spec: PlotSpec, ax) -> None:
    for path in spec.inputs:
        cols = read_columns(path, ("crb_l", "mse"), spec.kind)
        crb = _floats(cols["crb_l"])
        mse = _floats(cols["mse"])
        if crb.size:
            order = np.argsort(crb, kind="stable")
            ax.plot(crb[order], mse[order], marker="o", label=Path(path).stem)
    ax.set_xlabel("crb_l")
    ax.set_ylabel("aggregation mse")


def _convergence(spec: PlotSpec, ax) -> None:
    for path in spec.inputs:
        trace = np.asarray(read_trace(path), dtype=float)
        if trace.size:
            ax.plot(np.arange(1, trace.size + 1), trace, marker="o",
                    label=Path(path).stem)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("design objective")


def _ssl(spec: PlotSpec, ax) -> None:
    if len(spec.inputs) != 1:
        raise PlotSpecError("an ssl figure takes exactly one input CSV")
    cols = read_columns(spec.inputs[0], ("M", "centralized", "distributed"),
                        spec.kind)
    slots = np.arange(len(cols["M"]), dtype=float)
    if slots.size:
        ax.bar(slots - 0.2, _floats(cols["centralized"]), width=0.4,
               label="centralized")
        ax.bar(slots + 0.2, _floats(cols["distributed"]), width=0.4,
               label="distributed")
        ax.set_xticks(slots)
        ax.set_xticklabels(cols["M"])
    ax.set_xlabel("antennas per device")
    ax.set_ylabel("real samples shipped")


_BUILDERS = {
    "learning": _learning,
    "sensing": _sensing,
    "pareto": _pareto,
    "convergence": _convergence,
    "ssl": _ssl,
}


def build_figure(spec: PlotSpec):
    """The matplotlib Figure for a spec, data layer exactly per contract."""
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    try:
        _BUILDERS[spec.kind](spec, ax)
        logy = DEFAULT_LOGY[spec.kind] if spec.logy is None else spec.logy
        if logy:
            ax.set_yscale("log")
        if spec.title:
            ax.set_title(spec.title)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize="small")
    except Exception:
        plt.close(fig)
        raise
    return fig


def render(spec: PlotSpec) -> Path:
    """Write the figure file and return its path."""
    fig = build_figure(spec)
    out = Path(spec.out)
    # SVG output embeds a creation date unless told otherwise; PNG does
    # not, so only the vector path needs scrubbing for byte stability.
    metadata = {"Date": None} if out.suffix.lower() == ".svg" else None
    try:
        fig.savefig(out, dpi=spec.dpi, metadata=metadata)
    except OSError as exc:
        raise PlotSpecError(f"cannot write figure to '{out}': {exc}") from exc
    finally:
        plt.close(fig)
    return out
