"""Delimited summary tables and self-contained SVG charts.

Every chart carries its source data in a ``<!-- chart-data ... -->`` comment
so it can be checked without looking at pixels. Output is deterministic:
identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass
from enum import Enum
from html import escape
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import SpecMismatch

PALETTE = {
    "chorus_only": "#2b6cb0",
    "both": "#38a169",
    "par_only": "#ecc94b",
    "none": "#a0aec0",
    "linked": "#2b6cb0",
    "not_linked": "#a0aec0",
    "series": "#4a5568",
}
PERCENT_SLACK = 0.2
LABEL_MIN_PCT = 10.0

WIDTH, HEIGHT = 800, 480
MARGIN = {"left": 70, "right": 180, "top": 50, "bottom": 60}


class ChartKind(str, Enum):
    STACKED_BAR = "StackedBarSeries"
    PIE = "PieSeries"
    HISTOGRAM = "Histogram"
    LINE = "LineSeries"


@dataclass(frozen=True)
class ChartSpec:
    kind: ChartKind
    title: str
    series: tuple[str, ...]
    colors: tuple[str, ...]
    data_ref: str = ""
    x_label: str = ""
    y_label: str = ""
    bins: int = 50

    def __post_init__(self):
        object.__setattr__(self, "kind", ChartKind(self.kind))
        if len(self.series) != len(self.colors):
            raise SpecMismatch(f"{len(self.series)} series but {len(self.colors)} colors")
        unknown = [c for c in self.colors if c not in PALETTE]
        if unknown:
            raise SpecMismatch(f"unknown color keys {unknown}")
        if self.kind is ChartKind.HISTOGRAM and self.bins < 1:
            raise SpecMismatch("histogram needs at least one bin")


# --------------------------------------------------------------------------
# tables


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_table(columns: Sequence[str], rows: Sequence[Mapping[str, Any]], path: str | os.PathLike) -> int:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="raise")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return len(rows)


def emit_tables(
    tables: Mapping[str, tuple[Sequence[str], Sequence[Mapping[str, Any]]]],
    destination: str | os.PathLike,
) -> dict[str, Any]:
    """Write ``<name>.csv`` for each measure plus ``manifest.json``.

    ``tables`` maps a measure name to its column list and rows. The manifest
    lists each file with its row count and SHA-256, in name order.
    """
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    files = []
    for name in sorted(tables):
        columns, rows = tables[name]
        path = dest / f"{name}.csv"
        count = write_table(columns, rows, path)
        files.append({"file": path.name, "columns": list(columns), "rows": count, "sha256": _sha256(path)})
    manifest = {"files": files}
    (dest / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# --------------------------------------------------------------------------
# charts


def _num(x: float) -> str:
    text = f"{x:.2f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def _data_block(payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=True).replace("--", "-\\u002d")
    return f"<!-- chart-data\n{text}\n-->"


def read_chart_data(svg: str | bytes) -> Any:
    """Recover the embedded data block from a rendered chart."""
    if isinstance(svg, bytes):
        svg = svg.decode("utf-8")
    start = svg.index("<!-- chart-data\n") + len("<!-- chart-data\n")
    end = svg.index("\n-->", start)
    return json.loads(svg[start:end])


def _check_sum(label: str, values: Mapping[str, float]) -> None:
    total = sum(values.values())
    if abs(total - 100.0) > PERCENT_SLACK:
        raise SpecMismatch(f"{label}: percentages sum to {total:.3f}, not 100")


def _check_series(spec: ChartSpec, label: str, values: Mapping[str, float]) -> None:
    if set(values) != set(spec.series):
        raise SpecMismatch(f"{label}: series {sorted(values)} do not match spec {list(spec.series)}")


def _show_label(color_key: str, value: float) -> bool:
    return color_key == "none" or value >= LABEL_MIN_PCT


def _legend(spec: ChartSpec) -> list[str]:
    x = WIDTH - MARGIN["right"] + 20
    out = []
    for i, (name, color) in enumerate(zip(spec.series, spec.colors)):
        y = MARGIN["top"] + 20 * i
        out.append(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{PALETTE[color]}"/>')
        out.append(f'<text x="{x + 18}" y="{y + 10}" font-size="12">{escape(name)}</text>')
    return out


def _frame(spec: ChartSpec, body: list[str], payload: Any) -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="Helvetica, Arial, sans-serif">',
        _data_block(payload),
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:g}" y="28" font-size="16" text-anchor="middle">{escape(spec.title)}</text>',
    ]
    if spec.x_label:
        head.append(f'<text x="{(MARGIN["left"] + WIDTH - MARGIN["right"]) / 2:g}" y="{HEIGHT - 15}" '
                    f'font-size="12" text-anchor="middle">{escape(spec.x_label)}</text>')
    if spec.y_label:
        head.append(f'<text x="18" y="{HEIGHT / 2:g}" font-size="12" text-anchor="middle" '
                    f'transform="rotate(-90 18 {HEIGHT / 2:g})">{escape(spec.y_label)}</text>')
    return "\n".join(head + body + _legend(spec) + ["</svg>"]) + "\n"


def _plot_box():
    x0, y0 = MARGIN["left"], MARGIN["top"]
    return x0, y0, WIDTH - MARGIN["right"] - x0, HEIGHT - MARGIN["bottom"] - y0


def _stacked_bars(spec: ChartSpec, data: Mapping[str, Mapping[str, float]]):
    x0, y0, w, h = _plot_box()
    bars = list(data.items())
    body = [f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="#333"/>']
    slot = w / max(1, len(bars))
    payload_bars = []
    for i, (label, values) in enumerate(bars):
        _check_series(spec, f"bar {label}", values)
        _check_sum(f"bar {label}", values)
        bx = x0 + i * slot + slot * 0.15
        bw = slot * 0.7
        top = y0 + h
        for name, color in zip(spec.series, spec.colors):
            v = float(values[name])
            seg = h * v / 100.0
            top -= seg
            body.append(f'<rect x="{_num(bx)}" y="{_num(top)}" width="{_num(bw)}" height="{_num(seg)}" '
                        f'fill="{PALETTE[color]}"/>')
            if _show_label(color, v):
                body.append(f'<text x="{_num(bx + bw / 2)}" y="{_num(top + seg / 2 + 4)}" font-size="10" '
                            f'text-anchor="middle">{v:.0f}%</text>')
        body.append(f'<text x="{_num(bx + bw / 2)}" y="{y0 + h + 16}" font-size="11" '
                    f'text-anchor="middle">{escape(str(label))}</text>')
        payload_bars.append({"label": str(label), "values": {n: float(values[n]) for n in spec.series}})
    return body, {"bars": payload_bars}


def _pie(spec: ChartSpec, data: Mapping[str, float]):
    _check_series(spec, "pie", data)
    _check_sum("pie", data)
    x0, y0, w, h = _plot_box()
    cx, cy, r = x0 + w / 2, y0 + h / 2, min(w, h) / 2
    body = []
    nonzero = [(n, c, float(data[n])) for n, c in zip(spec.series, spec.colors) if float(data[n]) > 0]
    angle = -math.pi / 2
    total = sum(v for _, _, v in nonzero)
    for name, color, v in nonzero:
        sweep = 2 * math.pi * v / total
        if len(nonzero) == 1:
            body.append(f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(r)}" fill="{PALETTE[color]}"/>')
        else:
            x1, y1 = cx + r * math.cos(angle), cy + r * math.sin(angle)
            x2, y2 = cx + r * math.cos(angle + sweep), cy + r * math.sin(angle + sweep)
            large = 1 if sweep > math.pi else 0
            body.append(f'<path d="M{_num(cx)},{_num(cy)} L{_num(x1)},{_num(y1)} '
                        f'A{_num(r)},{_num(r)} 0 {large} 1 {_num(x2)},{_num(y2)} Z" fill="{PALETTE[color]}"/>')
        if _show_label(color, v):
            mid = angle + sweep / 2
            lx, ly = cx + 0.65 * r * math.cos(mid), cy + 0.65 * r * math.sin(mid)
            body.append(f'<text x="{_num(lx)}" y="{_num(ly)}" font-size="12" text-anchor="middle">{v:.0f}%</text>')
        angle += sweep
    return body, {"slices": {n: float(data[n]) for n in spec.series}}


def histogram_buckets(values: Sequence[float], bins: int, lo: float | None = None,
                      hi: float | None = None) -> list[dict[str, float]]:
    if not values:
        return []
    lo = min(values) if lo is None else lo
    hi = max(values) if hi is None else hi
    width = (hi - lo) / bins if hi > lo else 1.0
    counts = [0] * bins
    for v in values:
        i = min(bins - 1, max(0, int((v - lo) // width)))
        counts[i] += 1
    return [{"start": lo + i * width, "end": lo + (i + 1) * width, "count": c} for i, c in enumerate(counts)]


def _histogram(spec: ChartSpec, data: Sequence[float]):
    values = [float(v) for v in data]
    buckets = histogram_buckets(values, spec.bins)
    x0, y0, w, h = _plot_box()
    top = max((b["count"] for b in buckets), default=0) or 1
    bw = w / spec.bins
    color = PALETTE[spec.colors[0]] if spec.colors else PALETTE["series"]
    body = [f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="#333"/>']
    for i, b in enumerate(buckets):
        bh = h * b["count"] / top
        if b["count"]:
            body.append(f'<rect x="{_num(x0 + i * bw)}" y="{_num(y0 + h - bh)}" width="{_num(bw)}" '
                        f'height="{_num(bh)}" fill="{color}"/>')
    if buckets:
        body.append(f'<text x="{x0}" y="{y0 + h + 16}" font-size="11">{_num(buckets[0]["start"])}</text>')
        body.append(f'<text x="{x0 + w}" y="{y0 + h + 16}" font-size="11" text-anchor="end">'
                    f'{_num(buckets[-1]["end"])}</text>')
    return body, {"n": len(values), "buckets": buckets}


def _lines(spec: ChartSpec, data: Mapping[str, Sequence[Sequence[float]]]):
    _check_series(spec, "lines", {k: 0 for k in data})
    points = [p for s in spec.series for p in data[s]]
    x0, y0, w, h = _plot_box()
    body = [f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="#333"/>']
    payload: dict[str, list] = {}
    if points:
        xs, ys = [p[0] for p in points], [p[1] for p in points]
        xl, xh = min(xs), max(xs)
        yh = max(max(ys), 1e-9)
        sx = (lambda x: x0 + w * (x - xl) / (xh - xl)) if xh > xl else (lambda x: x0 + w / 2)
        sy = lambda y: y0 + h - h * y / yh  # noqa: E731
        for name, color in zip(spec.series, spec.colors):
            series = [(float(x), float(y)) for x, y in data[name]]
            payload[name] = [list(p) for p in series]
            if series:
                pts = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in series)
                body.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[color]}" stroke-width="2"/>')
    return body, {"series": payload}


def render_chart(spec: ChartSpec, data: Any, destination: str | os.PathLike) -> Path:
    """Render ``data`` as an SVG at ``destination``.

    Data shapes by kind: stacked bars take ``{bar_label: {series: pct}}``;
    pies take ``{series: pct}``; histograms take a flat sequence of values;
    line series take ``{series: [(x, y), ...]}``.
    """
    if spec.kind is ChartKind.STACKED_BAR:
        body, payload = _stacked_bars(spec, data)
    elif spec.kind is ChartKind.PIE:
        body, payload = _pie(spec, data)
    elif spec.kind is ChartKind.HISTOGRAM:
        body, payload = _histogram(spec, data)
    else:
        body, payload = _lines(spec, data)
    payload = {"kind": spec.kind.value, "title": spec.title, "data_ref": spec.data_ref,
               "series": list(spec.series), **payload}
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_frame(spec, body, payload), encoding="utf-8")
    return path
