"""Signaling-load calculators and deterministic CSV/JSON export.

Column schemas are module constants so the plotting side can import the
contract instead of guessing. Files are UTF-8, '.' decimal, LF-
terminated, with rows written in the order given; exporting the same
records twice yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ParameterError

ROUND_COLUMNS = ("round", "sensing_mse", "agg_mse", "task_loss",
                 "task_accuracy", "crb_l", "baseline_name", "seed")
PARETO_COLUMNS = ("epsilon0", "mse", "crb_l", "converged", "iters")
SSL_COLUMNS = ("K", "M", "s", "d", "R", "tau", "centralized", "distributed")


def _positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ParameterError(f"{name} must be a positive integer, got {value!r}")
    return value


def ssl_centralized(K: int, M: int, s: int) -> int:
    """Samples shipped when raw sensing signals are forwarded: 2*K*M*s.

    Each of the K devices forwards s complex samples per antenna, and a
    complex sample counts as two real ones.
    """
    return 2 * _positive_int(K, "K") * _positive_int(M, "M") * _positive_int(s, "s")


def ssl_distributed(d: int, R: int, tau: float) -> int:
    """Samples shipped by the in-protocol scheme: ceil(d * R / tau).

    d statistic entries per round, R rounds, tau entries packed per
    uplink resource unit. No antenna count enters by construction: the
    devices send statistics, not waveforms.
    """
    _positive_int(d, "d")
    _positive_int(R, "R")
    if not isinstance(tau, (int, float)) or isinstance(tau, bool) or tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau!r}")
    return math.ceil(d * R / tau)


def complexity_estimate(K: int, N: int, M: int, I: int, L: int) -> int:
    """Nominal per-solve operation count: L * (K*N*M^2 + N^3 + (K*M*I)^3).

    A scaling yardstick for plots, not a flop measurement: one term per
    dominant kernel (per-device channel algebra, receiver solve, and the
    joint precoder block).
    """
    for name, value in (("K", K), ("N", N), ("M", M), ("I", I), ("L", L)):
        _positive_int(value, name)
    return L * (K * N * M**2 + N**3 + (K * M * I) ** 3)


@dataclass(frozen=True)
class SslReport:
    """One row of the signaling-load comparison."""

    K: int
    M: int
    s: int
    d: int
    R: int
    tau: float
    centralized: int
    distributed: int


def make_ssl_report(K: int, M: int, s: int, d: int, R: int, tau: float) -> SslReport:
    return SslReport(K=K, M=M, s=s, d=d, R=R, tau=tau,
                     centralized=ssl_centralized(K, M, s),
                     distributed=ssl_distributed(d, R, tau))


def round_rows(logs, baseline_name: str, seed: int) -> list[dict]:
    """RoundLog records widened with the run identity columns."""
    return [{
        "round": log.round,
        "sensing_mse": log.sensing_mse,
        "agg_mse": log.agg_mse,
        "task_loss": log.task_loss,
        "task_accuracy": log.task_accuracy,
        "crb_l": log.crb_l,
        "baseline_name": baseline_name,
        "seed": seed,
    } for log in logs]


def pareto_rows(solutions) -> list[dict]:
    """Rows from (epsilon0, MoopSolution) pairs, in the order given."""
    return [{
        "epsilon0": eps0,
        "mse": sol.mse,
        "crb_l": sol.crb_l,
        "converged": sol.converged,
        "iters": sol.iters,
    } for eps0, sol in solutions]


def ssl_rows(reports) -> list[dict]:
    return [{
        "K": r.K, "M": r.M, "s": r.s, "d": r.d, "R": r.R, "tau": r.tau,
        "centralized": r.centralized, "distributed": r.distributed,
    } for r in reports]


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)  # shortest round-trip decimal, '.' separator
    return str(value)


def export_metrics(rows, path, columns) -> Path:
    """Write dict rows under a fixed header; an empty list leaves just the header."""
    columns = tuple(columns)
    if not columns:
        raise ParameterError("export needs at least one column")
    path = Path(path)
    lines = [",".join(columns)]
    for i, row in enumerate(rows):
        missing = set(columns) - set(row)
        if missing:
            raise ParameterError(
                f"row {i} lacks column '{sorted(missing)[0]}'")
        lines.append(",".join(_cell(row[name]) for name in columns))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot write metrics to '{path}': {exc}") from exc
    return path


def run_id(config_doc: dict, master_seed) -> str:
    """Short content id over the resolved config and seed list."""
    canon = json.dumps({"config": config_doc, "master_seed": master_seed},
                       sort_keys=True, separators=(",", ":"))
    return hashlib.blake2s(canon.encode("utf-8"), digest_size=6).hexdigest()


def write_run_metadata(path, config_doc: dict, master_seeds, **extras) -> Path:
    """JSON sidecar: resolved config, seeds, run id, and derived scalars."""
    doc = {
        "config": config_doc,
        "master_seeds": list(master_seeds),
        "run_id": run_id(config_doc, list(master_seeds)),
    }
    doc.update(extras)
    path = Path(path)
    try:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot write metadata to '{path}': {exc}") from exc
    return path
