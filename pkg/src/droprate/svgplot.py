"""Self-contained SVG loss charts.

Renders the combined comparison CSV as two line-chart panels (training and
validation loss vs iteration, one colored series per schedule). Everything
is emitted with fixed formatting and no timestamps, so identical input
bytes always produce identical output bytes.
"""

from __future__ import annotations

import math
from pathlib import Path

from .errors import CsvFormatError

COMBINED_HEADER = ["schedule", "iter", "train_loss", "val_loss", "dropout_p"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_PANEL_W, _PANEL_H = 390.0, 280.0
_MARGIN_L, _MARGIN_T, _GAP = 64.0, 46.0, 70.0
_WIDTH = int(_MARGIN_L + 2 * _PANEL_W + _GAP + 24)
_HEIGHT = int(_MARGIN_T + _PANEL_H + 58)


def read_combined_csv(path: str | Path) -> dict[str, list[tuple[int, float, float, float]]]:
    """Parse the long-format CSV into series keyed by schedule label.

    Raises CsvFormatError with a 1-based line number on any malformed row.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CsvFormatError(1, "empty file")
    header = lines[0].split(",")
    if header != COMBINED_HEADER:
        raise CsvFormatError(1, f"expected header {','.join(COMBINED_HEADER)!r}, got {lines[0]!r}")
    series: dict[str, list[tuple[int, float, float, float]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 5:
            raise CsvFormatError(lineno, f"expected 5 fields, got {len(cells)}")
        label = cells[0]
        try:
            it = int(cells[1])
            train, val, p = float(cells[2]), float(cells[3]), float(cells[4])
        except ValueError as e:
            raise CsvFormatError(lineno, str(e)) from None
        series.setdefault(label, []).append((it, train, val, p))
    if not series:
        raise CsvFormatError(2, "no data rows")
    return series


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 2.5, 5.0, 10.0) if raw <= m * mag)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = first
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if x == x else "nan"


def _panel(out: list[str], x0: float, title: str, series, value_index: int, colors) -> None:
    xs = [pt[0] for pts in series.values() for pt in pts]
    ys = [pt[value_index] for pts in series.values() for pt in pts]
    x_lo, x_hi = float(min(xs)), float(max(xs))
    y_lo, y_hi = min(ys), max(ys)
    pad = (y_hi - y_lo) * 0.05 or 0.5
    y_lo, y_hi = y_lo - pad, y_hi + pad
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0

    def px(x):
        return x0 + (x - x_lo) / (x_hi - x_lo) * _PANEL_W

    def py(y):
        return _MARGIN_T + _PANEL_H - (y - y_lo) / (y_hi - y_lo) * _PANEL_H

    y1 = _MARGIN_T + _PANEL_H
    out.append(f'<rect x="{x0:.2f}" y="{_MARGIN_T:.2f}" width="{_PANEL_W:.2f}" height="{_PANEL_H:.2f}" '
               f'fill="none" stroke="#333333" stroke-width="1"/>')
    out.append(f'<text x="{x0 + _PANEL_W / 2:.2f}" y="{_MARGIN_T - 14:.2f}" text-anchor="middle" '
               f'font-size="14" fill="#111111">{title}</text>')
    for tick in _nice_ticks(x_lo, x_hi):
        tx = px(tick)
        out.append(f'<line x1="{tx:.2f}" y1="{y1:.2f}" x2="{tx:.2f}" y2="{y1 + 5:.2f}" stroke="#333333"/>')
        out.append(f'<text x="{tx:.2f}" y="{y1 + 18:.2f}" text-anchor="middle" font-size="10" '
                   f'fill="#333333">{_fmt(tick)}</text>')
    for tick in _nice_ticks(y_lo, y_hi):
        ty = py(tick)
        out.append(f'<line x1="{x0 - 5:.2f}" y1="{ty:.2f}" x2="{x0:.2f}" y2="{ty:.2f}" stroke="#333333"/>')
        out.append(f'<text x="{x0 - 8:.2f}" y="{ty + 3:.2f}" text-anchor="end" font-size="10" '
                   f'fill="#333333">{_fmt(tick)}</text>')
    out.append(f'<text x="{x0 + _PANEL_W / 2:.2f}" y="{y1 + 36:.2f}" text-anchor="middle" font-size="12" '
               f'fill="#111111">iteration</text>')
    out.append(f'<text x="{x0 - 46:.2f}" y="{_MARGIN_T + _PANEL_H / 2:.2f}" text-anchor="middle" font-size="12" '
               f'fill="#111111" transform="rotate(-90 {x0 - 46:.2f} {_MARGIN_T + _PANEL_H / 2:.2f})">loss</text>')

    for idx, (label, pts) in enumerate(series.items()):
        color = colors[label]
        coords = " ".join(f"{px(pt[0]):.2f},{py(pt[value_index]):.2f}" for pt in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MARGIN_T + 12 + 14 * idx
        lx = x0 + _PANEL_W - 120
        out.append(f'<line x1="{lx:.2f}" y1="{ly:.2f}" x2="{lx + 18:.2f}" y2="{ly:.2f}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 22:.2f}" y="{ly + 3:.2f}" font-size="10" fill="#111111">{label}</text>')


def render_chart(series: dict[str, list[tuple[int, float, float, float]]]) -> str:
    colors = {label: _COLORS[i % len(_COLORS)] for i, label in enumerate(series)}
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="#ffffff"/>',
    ]
    _panel(out, _MARGIN_L, "training loss", series, 1, colors)
    _panel(out, _MARGIN_L + _PANEL_W + _GAP, "validation loss", series, 2, colors)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csv(csv_path: str | Path, out_path: str | Path) -> None:
    series = read_combined_csv(csv_path)
    Path(out_path).write_text(render_chart(series), encoding="utf-8")
