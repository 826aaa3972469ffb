"""Passthrough contract: the data layer of every figure equals its files.

The golden tests parse the CSV cells with float() exactly as the
builders do, then compare against the artists' arrays with plain
equality (NaN-aware where a column legitimately carries NaN), so any
rescaling, resampling or recomputation inside the builders would fail
them bit-for-bit.
"""

import numpy as np
import pytest

import matplotlib.pyplot as plt

from reportplots import (
    REQUIRED_COLUMNS,
    MissingColumnError,
    PlotSpec,
    PlotSpecError,
    build_figure,
    render,
    spec_from_json,
)

METRICS_ROWS = [
    "round,sensing_mse,agg_mse,task_loss,task_accuracy,crb_l,baseline_name,seed",
    "1,0.5,0.25,1.3862943611198906,0.25,2.5e-11,collabsensefed,0",
    "2,0.3333333333333333,0.2,1.25,0.5,2.5e-11,collabsensefed,0",
    "3,0.125,0.1875,1.125,0.75,2.4e-11,collabsensefed,0",
    "1,0.75,0.3,1.4,0.25,nan,single_shot,0",
    "2,0.75,0.3,1.4,0.25,nan,single_shot,0",
    "3,0.75,0.3,1.4,0.25,nan,single_shot,0",
    "1,0.625,0.26,1.35,0.3125,2.6e-11,collabsensefed,1",
    "2,0.4,0.22,1.3,0.4375,2.6e-11,collabsensefed,1",
    "3,0.2,0.19,1.2,0.625,2.55e-11,collabsensefed,1",
]

PARETO_ROWS = [
    "epsilon0,mse,crb_l,converged,iters",
    "0.3,0.16,2.7e-11,false,50",
    "0.1,0.12,2.5e-11,true,12",
    "0.2,0.14,2.6e-11,true,30",
]

SSL_ROWS = [
    "K,M,s,d,R,tau,centralized,distributed",
    "10,1,200,3,50,5.0,4000,30",
    "10,8,200,3,50,5.0,32000,30",
    "10,64,200,3,50,5.0,256000,30",
]

TRACE = [10.0, 3.5, 1.25, 1.2]


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def metrics_csv(tmp_path):
    return _write(tmp_path / "metrics.csv", METRICS_ROWS)


@pytest.fixture
def pareto_csv(tmp_path):
    return _write(tmp_path / "pareto.csv", PARETO_ROWS)


@pytest.fixture
def ssl_csv(tmp_path):
    return _write(tmp_path / "ssl.csv", SSL_ROWS)


@pytest.fixture
def trace_json(tmp_path):
    path = tmp_path / "solve_moop.json"
    path.write_text(
        '{"config": {"K": 15}, "objective_trace": '
        + repr(TRACE).replace("'", '"') + "}\n", encoding="utf-8")
    return str(path)


def _column(rows, name, where=None):
    header = rows[0].split(",")
    col = header.index(name)
    cells = [line.split(",") for line in rows[1:]]
    if where is not None:
        cells = [c for c in cells if where(dict(zip(header, c)))]
    return np.array([float(c[col]) for c in cells])


def _lines(fig):
    return fig.axes[0].get_lines()


# ---------------------------------------------------------------------------
# Golden passthrough, one test per figure kind.


def test_learning_lines_equal_accuracy_columns(tmp_path, metrics_csv):
    fig = build_figure(PlotSpec("learning", (metrics_csv,),
                                str(tmp_path / "f.png")))
    groups = [("collabsensefed", "0"), ("single_shot", "0"),
              ("collabsensefed", "1")]
    lines = _lines(fig)
    assert len(lines) == len(groups)
    for line, (name, seed) in zip(lines, groups):
        pick = lambda row: (row["baseline_name"], row["seed"]) == (name, seed)
        assert np.array_equal(line.get_xdata(),
                              _column(METRICS_ROWS, "round", pick))
        assert np.array_equal(line.get_ydata(),
                              _column(METRICS_ROWS, "task_accuracy", pick))
        assert line.get_label() == f"{name} seed {seed}"
    plt.close(fig)


def test_learning_y_column_override(tmp_path, metrics_csv):
    fig = build_figure(PlotSpec("learning", (metrics_csv,),
                                str(tmp_path / "f.png"),
                                y_column="task_loss"))
    pick = lambda row: (row["baseline_name"], row["seed"]) == ("collabsensefed", "0")
    assert np.array_equal(_lines(fig)[0].get_ydata(),
                          _column(METRICS_ROWS, "task_loss", pick))
    assert fig.axes[0].get_ylabel() == "task loss"
    plt.close(fig)


def test_sensing_lines_carry_mse_and_bound_columns(tmp_path, metrics_csv):
    fig = build_figure(PlotSpec("sensing", (metrics_csv,),
                                str(tmp_path / "f.png")))
    groups = [("collabsensefed", "0"), ("single_shot", "0"),
              ("collabsensefed", "1")]
    lines = _lines(fig)
    assert len(lines) == 2 * len(groups)
    for k, (name, seed) in enumerate(groups):
        pick = lambda row: (row["baseline_name"], row["seed"]) == (name, seed)
        mse_line, bound_line = lines[2 * k], lines[2 * k + 1]
        assert np.array_equal(mse_line.get_ydata(),
                              _column(METRICS_ROWS, "sensing_mse", pick))
        assert np.array_equal(bound_line.get_ydata(),
                              _column(METRICS_ROWS, "crb_l", pick),
                              equal_nan=True)
        assert bound_line.get_linestyle() == "--"
    assert fig.axes[0].get_yscale() == "log"
    plt.close(fig)


def test_pareto_points_sorted_by_bound(tmp_path, pareto_csv):
    fig = build_figure(PlotSpec("pareto", (pareto_csv,),
                                str(tmp_path / "f.png")))
    line = _lines(fig)[0]
    crb = _column(PARETO_ROWS, "crb_l")
    mse = _column(PARETO_ROWS, "mse")
    order = np.argsort(crb, kind="stable")
    assert np.array_equal(line.get_xdata(), crb[order])
    assert np.array_equal(line.get_ydata(), mse[order])
    assert np.all(np.diff(line.get_xdata()) >= 0)
    plt.close(fig)


def test_convergence_line_equals_trace(tmp_path, trace_json):
    fig = build_figure(PlotSpec("convergence", (trace_json,),
                                str(tmp_path / "f.png")))
    line = _lines(fig)[0]
    assert np.array_equal(line.get_xdata(), np.arange(1, len(TRACE) + 1))
    assert np.array_equal(line.get_ydata(), np.array(TRACE))
    plt.close(fig)


def test_ssl_bar_heights_equal_count_columns(tmp_path, ssl_csv):
    fig = build_figure(PlotSpec("ssl", (ssl_csv,), str(tmp_path / "f.png")))
    ax = fig.axes[0]
    cent, dist = ax.containers
    assert np.array_equal([bar.get_height() for bar in cent],
                          _column(SSL_ROWS, "centralized"))
    assert np.array_equal([bar.get_height() for bar in dist],
                          _column(SSL_ROWS, "distributed"))
    assert [t.get_text() for t in ax.get_xticklabels()] == ["1", "8", "64"]
    plt.close(fig)


def test_ssl_takes_exactly_one_input(tmp_path, ssl_csv):
    with pytest.raises(PlotSpecError, match="exactly one"):
        build_figure(PlotSpec("ssl", (ssl_csv, ssl_csv),
                              str(tmp_path / "f.png")))


# ---------------------------------------------------------------------------
# Degenerate inputs.


@pytest.mark.parametrize("kind,header", [
    ("learning", METRICS_ROWS[0]),
    ("sensing", METRICS_ROWS[0]),
    ("pareto", PARETO_ROWS[0]),
    ("ssl", SSL_ROWS[0]),
])
def test_header_only_csv_renders_labeled_empty_axes(tmp_path, kind, header):
    src = _write(tmp_path / "empty.csv", [header])
    out = tmp_path / "f.png"
    fig = build_figure(PlotSpec(kind, (src,), str(out)))
    ax = fig.axes[0]
    assert ax.get_xlabel() and ax.get_ylabel()
    assert not ax.get_lines()
    plt.close(fig)
    render(PlotSpec(kind, (src,), str(out)))
    assert out.exists()


def test_empty_trace_renders_without_points(tmp_path):
    src = tmp_path / "solve_moop.json"
    src.write_text('{"objective_trace": []}\n', encoding="utf-8")
    fig = build_figure(PlotSpec("convergence", (str(src),),
                                str(tmp_path / "f.png")))
    assert not _lines(fig)
    assert fig.axes[0].get_xlabel() and fig.axes[0].get_ylabel()
    plt.close(fig)


@pytest.mark.parametrize("kind,rows,lost", [
    ("sensing", METRICS_ROWS, "crb_l"),
    ("learning", METRICS_ROWS, "task_accuracy"),
    ("pareto", PARETO_ROWS, "mse"),
    ("ssl", SSL_ROWS, "distributed"),
])
def test_missing_columns_are_named(tmp_path, kind, rows, lost):
    header = rows[0].split(",")
    keep = [i for i, name in enumerate(header) if name != lost]
    broken = [",".join(line.split(",")[i] for i in keep) for line in rows]
    src = _write(tmp_path / "broken.csv", broken)
    with pytest.raises(MissingColumnError) as err:
        build_figure(PlotSpec(kind, (src,), str(tmp_path / "f.png")))
    assert lost in str(err.value)
    assert "broken.csv" in str(err.value)
    assert kind in str(err.value)


def test_missing_trace_key_is_named(tmp_path):
    src = tmp_path / "solve_moop.json"
    src.write_text('{"config": {}}\n', encoding="utf-8")
    with pytest.raises(MissingColumnError, match="objective_trace"):
        build_figure(PlotSpec("convergence", (str(src),),
                              str(tmp_path / "f.png")))


# ---------------------------------------------------------------------------
# Request validation and file output.


def test_spec_rejects_bad_requests(tmp_path):
    with pytest.raises(PlotSpecError, match="kind"):
        PlotSpec("histogram", ("a.csv",), "f.png")
    with pytest.raises(PlotSpecError, match="at least one"):
        PlotSpec("pareto", (), "f.png")
    with pytest.raises(PlotSpecError, match="end in"):
        PlotSpec("pareto", ("a.csv",), "f.pdf")
    with pytest.raises(PlotSpecError, match="dpi"):
        PlotSpec("pareto", ("a.csv",), "f.png", dpi=0)
    with pytest.raises(PlotSpecError, match="y_column"):
        PlotSpec("pareto", ("a.csv",), "f.png", y_column="mse")


def test_spec_json_round_trip(tmp_path, pareto_csv):
    doc = tmp_path / "spec.json"
    doc.write_text(
        '{"kind": "pareto", "inputs": ["%s"], "out": "%s",'
        ' "title": "front", "dpi": 72}\n'
        % (pareto_csv, tmp_path / "f.svg"), encoding="utf-8")
    spec = spec_from_json(doc)
    assert spec.kind == "pareto" and spec.dpi == 72
    assert render(spec).exists()


def test_spec_json_rejects_unknown_and_missing_keys(tmp_path):
    doc = tmp_path / "spec.json"
    doc.write_text('{"kind": "pareto", "inputs": ["a.csv"], "out": "f.png",'
                   ' "colour": "red"}\n', encoding="utf-8")
    with pytest.raises(PlotSpecError, match="colour"):
        spec_from_json(doc)
    doc.write_text('{"kind": "pareto", "out": "f.png"}\n', encoding="utf-8")
    with pytest.raises(PlotSpecError, match="inputs"):
        spec_from_json(doc)
    doc.write_text("not json\n", encoding="utf-8")
    with pytest.raises(PlotSpecError, match="valid JSON"):
        spec_from_json(doc)


@pytest.mark.parametrize("suffix", [".png", ".svg"])
def test_repeat_renders_are_byte_identical(tmp_path, pareto_csv, suffix):
    first = render(PlotSpec("pareto", (pareto_csv,),
                            str(tmp_path / ("a" + suffix))))
    second = render(PlotSpec("pareto", (pareto_csv,),
                             str(tmp_path / ("b" + suffix))))
    assert first.read_bytes() == second.read_bytes()


def test_required_columns_pin_the_export_schema():
    # Restated literally from the exporter's documented schemas; this is
    # the consumer side of the cross-package column contract.
    round_columns = ("round", "sensing_mse", "agg_mse", "task_loss",
                     "task_accuracy", "crb_l", "baseline_name", "seed")
    pareto_columns = ("epsilon0", "mse", "crb_l", "converged", "iters")
    ssl_columns = ("K", "M", "s", "d", "R", "tau",
                   "centralized", "distributed")
    assert set(REQUIRED_COLUMNS["learning"]) <= set(round_columns)
    assert set(REQUIRED_COLUMNS["sensing"]) <= set(round_columns)
    assert set(REQUIRED_COLUMNS["pareto"]) <= set(pareto_columns)
    assert set(REQUIRED_COLUMNS["ssl"]) <= set(ssl_columns)
