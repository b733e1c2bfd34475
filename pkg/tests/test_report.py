"""Delimited output: byte-stable CSV round trips and figure rendering."""

from __future__ import annotations

import pytest

from agh import report
from agh.errors import FormatError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_format_value_is_exact_and_typed():
    assert report.format_value(True) == "1"
    assert report.format_value(False) == "0"
    assert report.format_value(3) == "3"
    assert report.format_value("nn") == "nn"
    assert report.format_value(0.1) == "0.1"
    third = 1.0 / 3.0
    assert float(report.format_value(third)) == third  # repr round-trips


def test_write_read_round_trip_exact(tmp_path):
    path = tmp_path / "log.csv"
    rows = [
        {"epoch": 0, "train_cost": 1.0 / 3.0, "val_cost": 2.5,
         "baseline_cost": 2.5, "swapped": True, "seconds": 0.125},
        {"epoch": 1, "train_cost": 100.0, "val_cost": 1e-9,
         "baseline_cost": 2.0, "swapped": False, "seconds": 3.0},
    ]
    report.write_csv(path, report.TRAIN_COLUMNS, rows)
    columns, parsed = report.read_csv(path)
    assert columns == list(report.TRAIN_COLUMNS)
    assert len(parsed) == 2
    assert float(parsed[0]["train_cost"]) == 1.0 / 3.0
    assert float(parsed[1]["val_cost"]) == 1e-9
    assert parsed[0]["swapped"] == "1" and parsed[1]["swapped"] == "0"
    assert int(parsed[1]["epoch"]) == 1


def test_csv_bytes_are_stable_with_unix_line_endings(tmp_path):
    rows = [{"solver": "nn", "instances": 3, "failures": 0,
             "mean_objective": 12.5, "mean_gap": 0.0, "mean_seconds": 0.25}]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    report.write_csv(a, report.BENCH_COLUMNS, rows)
    report.write_csv(b, report.BENCH_COLUMNS, rows)
    data = a.read_bytes()
    assert data == b.read_bytes()
    assert b"\r" not in data
    assert data.endswith(b"\n")


def test_read_csv_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(FormatError, match="empty CSV"):
        report.read_csv(path)


def train_csv(tmp_path, rows=None):
    path = tmp_path / "train.csv"
    if rows is None:
        rows = [
            {"epoch": e, "train_cost": 10.0 - e, "val_cost": 9.5 - e,
             "baseline_cost": 9.5, "swapped": e % 2 == 0, "seconds": 1.0}
            for e in range(3)
        ]
    report.write_csv(path, report.TRAIN_COLUMNS, rows)
    return path


def bench_csv(tmp_path):
    path = tmp_path / "bench.csv"
    rows = [
        {"solver": "nn", "instances": 5, "failures": 0,
         "mean_objective": 20.0, "mean_gap": 0.1, "mean_seconds": 0.01},
        {"solver": "cws", "instances": 5, "failures": 0,
         "mean_objective": 18.0, "mean_gap": 0.0, "mean_seconds": 0.02},
    ]
    report.write_csv(path, report.BENCH_COLUMNS, rows)
    return path


def test_training_curve_writes_png(tmp_path):
    out = report.training_curve(train_csv(tmp_path), tmp_path / "curve.png")
    assert out.read_bytes().startswith(PNG_MAGIC)


def test_render_training_log(tmp_path):
    written = report.render(train_csv(tmp_path), tmp_path / "figs")
    assert [p.name for p in written] == ["objective_vs_epoch.png"]
    for p in written:
        assert p.read_bytes().startswith(PNG_MAGIC)


def test_render_bench_summary(tmp_path):
    written = report.render(bench_csv(tmp_path), tmp_path / "figs")
    assert sorted(p.name for p in written) == [
        "gap_bars.png", "objective_bars.png"]
    for p in written:
        assert p.read_bytes().startswith(PNG_MAGIC)


def test_render_rejects_csv_without_renderable_columns(tmp_path):
    path = tmp_path / "events.csv"
    report.write_csv(path, report.EVENT_COLUMNS, [
        {"time": 0.0, "revealed": "1;2", "rejected": "", "n_frozen": 0,
         "n_pending": 4, "total_cost": 10.0, "incremental_cost": 10.0}])
    with pytest.raises(FormatError, match="no renderable columns"):
        report.render(path, tmp_path / "figs")


def test_render_and_figures_reject_headers_without_rows(tmp_path):
    path = tmp_path / "empty_rows.csv"
    report.write_csv(path, report.TRAIN_COLUMNS, [])
    with pytest.raises(FormatError, match="no data rows"):
        report.render(path, tmp_path / "figs")
    with pytest.raises(FormatError, match="no data rows"):
        report.training_curve(path, tmp_path / "curve.png")


def test_figures_reject_missing_columns(tmp_path):
    path = tmp_path / "odd.csv"
    report.write_csv(path, ("a", "b"), [{"a": 1, "b": 2}])
    with pytest.raises(FormatError, match="missing CSV columns"):
        report.training_curve(path, tmp_path / "curve.png")
    with pytest.raises(FormatError, match="missing CSV columns"):
        report.gap_bars(path, tmp_path / "gaps.png")
    with pytest.raises(FormatError, match="missing CSV columns"):
        report.objective_bars(path, tmp_path / "objs.png")
