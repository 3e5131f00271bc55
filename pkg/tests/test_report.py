from __future__ import annotations

import json
import random
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from grilink.errors import SpecMismatch
from grilink.report import (
    PALETTE,
    ChartKind,
    ChartSpec,
    emit_tables,
    histogram_buckets,
    read_chart_data,
    render_chart,
)

CATS = ("ChorusOnly", "Both", "ParOnly", "NoReference")
COLORS = ("chorus_only", "both", "par_only", "none")
BARS = ChartSpec(ChartKind.STACKED_BAR, "Awards by year", CATS, COLORS, data_ref="cumulative_matrix.csv")


def test_coverage_summary_table(tmp_path):
    columns = ["total_awards", "chorus_only"]
    manifest = emit_tables({"coverage_summary": (columns, [{"total_awards": 10, "chorus_only": 3}])}, tmp_path)
    (entry,) = manifest["files"]
    assert entry["file"] == "coverage_summary.csv" and entry["rows"] == 1 and entry["columns"] == columns
    assert (tmp_path / "coverage_summary.csv").read_text() == "total_awards,chorus_only\n10,3\n"
    assert json.loads((tmp_path / "manifest.json").read_text()) == manifest


def test_empty_analytics_give_empty_manifest(tmp_path):
    assert emit_tables({}, tmp_path) == {"files": []}
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]


def test_rerun_gives_identical_hashes(tmp_path):
    tables = {
        "b": (["x"], [{"x": i} for i in range(5)]),
        "a": (["y", "z"], [{"y": "q", "z": 1.5}]),
    }
    first = emit_tables(tables, tmp_path / "one")
    second = emit_tables(tables, tmp_path / "two")
    assert first == second
    assert [f["file"] for f in first["files"]] == ["a.csv", "b.csv"]
    assert all(re.fullmatch(r"[0-9a-f]{64}", f["sha256"]) for f in first["files"])


def test_rows_are_projected_onto_declared_columns(tmp_path):
    emit_tables({"t": (["x", "y"], [{"y": 2, "x": 1, "extra": 3}, {"x": 4}])}, tmp_path)
    assert (tmp_path / "t.csv").read_text() == "x,y\n1,2\n4,\n"


def test_spec_validation():
    with pytest.raises(SpecMismatch):
        ChartSpec(ChartKind.PIE, "t", ("a", "b"), ("none",))
    with pytest.raises(SpecMismatch):
        ChartSpec(ChartKind.PIE, "t", ("a",), ("magenta",))
    with pytest.raises(SpecMismatch):
        ChartSpec(ChartKind.HISTOGRAM, "t", (), (), bins=0)


def test_stacked_bars_sum_to_100(tmp_path):
    rnd = random.Random(3)
    data = {}
    for year in range(2008, 2022):
        cuts = sorted(rnd.randint(0, 1000) for _ in range(3))
        parts = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], 1000 - cuts[2]]
        data[str(year)] = {c: p / 10 for c, p in zip(CATS, parts)}
    path = render_chart(BARS, data, tmp_path / "bars.svg")
    payload = read_chart_data(path.read_text())
    assert payload["kind"] == "StackedBarSeries" and payload["data_ref"] == "cumulative_matrix.csv"
    assert len(payload["bars"]) == 14
    for bar in payload["bars"]:
        assert sum(bar["values"].values()) == pytest.approx(100, abs=0.2)


def test_bars_off_by_more_than_slack_are_rejected(tmp_path):
    with pytest.raises(SpecMismatch):
        render_chart(BARS, {"2015": {"ChorusOnly": 50, "Both": 0, "ParOnly": 0, "NoReference": 49.7}}, tmp_path / "x.svg")
    with pytest.raises(SpecMismatch):
        render_chart(BARS, {"2015": {"ChorusOnly": 100}}, tmp_path / "x.svg")


def test_label_rule(tmp_path):
    data = {"2015": {"ChorusOnly": 5.0, "Both": 25.0, "ParOnly": 70.0, "NoReference": 0.0}}
    svg = render_chart(BARS, data, tmp_path / "l.svg").read_text()
    labels = re.findall(r">(\d+)%</text>", svg)
    assert sorted(labels) == ["0", "25", "70"]


def test_single_category_pie_is_full_circle(tmp_path):
    spec = ChartSpec(ChartKind.PIE, "DOIs", ("Linked", "NotLinked"), ("linked", "not_linked"))
    svg = render_chart(spec, {"Linked": 100.0, "NotLinked": 0.0}, tmp_path / "pie.svg").read_text()
    assert svg.count("<circle") == 1 and "<path" not in svg
    assert f'fill="{PALETTE["linked"]}"' in svg


def test_two_slice_pie(tmp_path):
    spec = ChartSpec(ChartKind.PIE, "DOIs", ("Linked", "NotLinked"), ("linked", "not_linked"))
    svg = render_chart(spec, {"Linked": 45.5, "NotLinked": 54.5}, tmp_path / "pie.svg").read_text()
    assert svg.count("<path") == 2
    assert read_chart_data(svg)["slices"] == {"Linked": 45.5, "NotLinked": 54.5}


def test_histogram_shows_two_clusters(tmp_path):
    rnd = random.Random(9)
    lengths = [rnd.randint(225_500, 226_000) for _ in range(300)] + [rnd.randint(269_500, 274_500) for _ in range(200)]
    spec = ChartSpec(ChartKind.HISTOGRAM, "Response lengths", ("length",), ("series",), bins=50)
    payload = read_chart_data(render_chart(spec, lengths, tmp_path / "h.svg").read_text())
    occupied = [b["count"] > 0 for b in payload["buckets"]]
    runs = "".join("1" if o else "0" for o in occupied).strip("0")
    assert len([r for r in runs.split("0") if r]) == 2
    assert "0" * 30 in runs
    assert sum(b["count"] for b in payload["buckets"]) == payload["n"] == 500


def test_histogram_buckets_edges():
    assert histogram_buckets([], 5) == []
    (bucket,) = histogram_buckets([3, 3, 3], 1)
    assert bucket["count"] == 3
    buckets = histogram_buckets([0, 10], 2)
    assert [b["count"] for b in buckets] == [1, 1]


def test_line_chart(tmp_path):
    spec = ChartSpec(ChartKind.LINE, "Funder metadata", ("share",), ("series",))
    payload = read_chart_data(render_chart(spec, {"share": [(2010, 40), (2020, 80)]}, tmp_path / "l.svg").read_text())
    assert payload["series"] == {"share": [[2010.0, 40.0], [2020.0, 80.0]]}


def test_titles_are_escaped_and_data_block_safe(tmp_path):
    spec = ChartSpec(ChartKind.LINE, "a < b -- c", ("s",), ("series",))
    svg = render_chart(spec, {"s": []}, tmp_path / "e.svg").read_text()
    assert "a &lt; b -- c" in svg
    comment = svg[svg.index("<!-- chart-data"): svg.index("\n-->")]
    assert "--" not in comment[4:]
    assert read_chart_data(svg)["title"] == "a < b -- c"


@given(st.lists(st.integers(0, 100), min_size=4, max_size=4).filter(lambda xs: sum(xs) > 0))
def test_rendering_is_deterministic(tmp_path_factory, weights):
    total = sum(weights)
    values = {c: 100 * w / total for c, w in zip(CATS, weights)}
    d = tmp_path_factory.mktemp("det")
    a = render_chart(BARS, {"2019": values}, d / "a.svg").read_bytes()
    b = render_chart(BARS, {"2019": values}, d / "b.svg").read_bytes()
    assert a == b
