"""SVG charts rendered from a report directory's CSV tables.

Charts are plain SVG strings built from ``polyline``/``rect``/``line``/``text``
primitives. Each reads only the CSVs it needs, so ``write_plots`` works on any
report directory written by :func:`starpath.report.write_report`.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from starpath.constants import (
    DISTANCE_SVG,
    EPOCHS_CSV,
    FRACTION_SVG,
    ITERS_CSV,
    NORM_SVG,
    RESIDUAL_SVG,
    SUBSEQ_CSV,
    SUBSEQ_SVG,
)
from starpath.errors import MissingReportError

logger = logging.getLogger("starpath")

WIDTH = 640
HEIGHT = 400
PAD = 60
PALETTE = ("#3498db", "#e67e22", "#2ecc71", "#9b59b6", "#1abc9c",
           "#e74c3c", "#34495e", "#f1c40f", "#7f8c8d", "#d35400")
MAX_SUBSEQ_LINES = 10

Point = Tuple[float, float]


def _esc(s) -> str:
    """XML-escape a string."""
    return (str(s).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _num(text: str) -> Optional[float]:
    if text is None or text == "":
        return None
    value = float(text)
    return value if math.isfinite(value) else None


def read_rows(path: Path) -> List[Dict[str, str]]:
    if not path.is_file():
        raise MissingReportError(str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.1e}"
    return f"{v:.3g}"


# ── Axes ─────────────────────────────────────────────────────────────


@dataclass
class Axes:
    """Data-to-pixel mapping. Ranges always cover every plotted value."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    log_y: bool = False

    @classmethod
    def fit(cls, points: Sequence[Point], log_y: bool = False, include_zero: bool = False) -> "Axes":
        xs = [x for x, _ in points] or [0.0]
        ys = [y for _, y in points] or [0.0]
        if log_y:
            ys = [math.log10(y) for y in ys]
        elif include_zero:
            ys = ys + [0.0]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if x_hi == x_lo:
            x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
        if y_hi == y_lo:
            spread = abs(y_lo) * 0.1 or 1.0
            y_lo, y_hi = y_lo - spread, y_hi + spread
        return cls(x_lo, x_hi, y_lo, y_hi, log_y)

    def px(self, x: float) -> float:
        return PAD + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - 2 * PAD)

    def py(self, y: float) -> float:
        if self.log_y:
            y = math.log10(y)
        return HEIGHT - PAD - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - 2 * PAD)

    def y_ticks(self, count: int = 5) -> List[Tuple[float, str]]:
        ticks = []
        for i in range(count):
            v = self.y_lo + (self.y_hi - self.y_lo) * i / (count - 1)
            label = _fmt_tick(10.0 ** v) if self.log_y else _fmt_tick(v)
            ticks.append((HEIGHT - PAD - (v - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - 2 * PAD), label))
        return ticks


@dataclass
class Series:
    label: str
    points: List[Point] = field(default_factory=list)
    color: str = PALETTE[0]


def _frame(title: str, x_label: str, y_label: str, axes: Axes) -> List[str]:
    out = [
        f'<svg width="{WIDTH}" height="{HEIGHT}" xmlns="http://www.w3.org/2000/svg">',
        '<rect width="100%" height="100%" fill="white" />',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black" />',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black" />',
    ]
    for y, label in axes.y_ticks():
        out.append(f'<line x1="{PAD}" y1="{y:.2f}" x2="{WIDTH - PAD}" y2="{y:.2f}" '
                   'stroke="#ddd" stroke-dasharray="4" />')
        out.append(f'<text x="{PAD - 5}" y="{y + 4:.2f}" font-family="Arial" font-size="10" '
                   f'text-anchor="end">{_esc(label)}</text>')
    for x in (axes.x_lo, axes.x_hi):
        out.append(f'<text x="{axes.px(x):.2f}" y="{HEIGHT - PAD + 15}" font-family="Arial" '
                   f'font-size="10" text-anchor="middle">{_esc(_fmt_tick(x))}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="25" font-family="Arial" font-size="16" '
               f'text-anchor="middle" font-weight="bold">{_esc(title)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" font-family="Arial" font-size="12" '
               f'text-anchor="middle">{_esc(x_label)}</text>')
    out.append(f'<text x="15" y="{HEIGHT / 2}" font-family="Arial" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 15 {HEIGHT / 2})">{_esc(y_label)}</text>')
    return out


def _polyline(axes: Axes, series: Series) -> str:
    pts = " ".join(f"{axes.px(x):.2f},{axes.py(y):.2f}" for x, y in series.points)
    return f'<polyline points="{pts}" fill="none" stroke="{series.color}" stroke-width="2" />'


def _legend(series: Sequence[Series]) -> List[str]:
    out = []
    for i, s in enumerate(series):
        y = PAD + 5 + 18 * i
        out.append(f'<rect x="{WIDTH - PAD - 140}" y="{y}" width="12" height="12" fill="{s.color}" />')
        out.append(f'<text x="{WIDTH - PAD - 122}" y="{y + 10}" font-family="Arial" '
                   f'font-size="11">{_esc(s.label)}</text>')
    return out


def line_chart(
    title: str,
    x_label: str,
    y_label: str,
    series: Sequence[Series],
    log_y: bool = False,
    zero_line: bool = False,
) -> str:
    """Multi-series line chart; *log_y* falls back to linear unless every value is positive."""
    points = [pt for s in series for pt in s.points]
    log_y = log_y and bool(points) and all(y > 0 for _, y in points)
    axes = Axes.fit(points, log_y=log_y, include_zero=zero_line)
    out = _frame(title, x_label, y_label + (" (log)" if log_y else ""), axes)
    if zero_line and not log_y:
        y0 = axes.py(0.0)
        out.append(f'<line x1="{PAD}" y1="{y0:.2f}" x2="{WIDTH - PAD}" y2="{y0:.2f}" '
                   'stroke="red" stroke-width="1.5" />')
    out.extend(_polyline(axes, s) for s in series if s.points)
    if len(series) > 1:
        out.extend(_legend(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(title: str, x_label: str, y_label: str, bars: Series, overlay: Optional[Series] = None) -> str:
    """Bars in [0, 1] with an optional line drawn on its own right-hand scale."""
    xs = [x for x, _ in bars.points]
    span = xs + [x for x, _ in overlay.points] if overlay is not None else xs
    span = span or [0.0]
    axes = Axes(min(span) - 0.5, max(span) + 0.5, 0.0, 1.0)
    out = _frame(title, x_label, y_label, axes)
    slot = (WIDTH - 2 * PAD) / max(len(xs), 1)
    width = max(1.0, 0.8 * min(slot, (WIDTH - 2 * PAD) / (axes.x_hi - axes.x_lo)))
    for x, y in bars.points:
        top = axes.py(y)
        out.append(f'<rect x="{axes.px(x) - width / 2:.2f}" y="{top:.2f}" width="{width:.2f}" '
                   f'height="{HEIGHT - PAD - top:.2f}" fill="{bars.color}" />')
    legend = [bars]
    if overlay is not None and overlay.points:
        right = Axes.fit(overlay.points)
        right.x_lo, right.x_hi = axes.x_lo, axes.x_hi
        out.append(_polyline(right, overlay))
        for y, label in right.y_ticks():
            out.append(f'<text x="{WIDTH - PAD + 5}" y="{y + 4:.2f}" font-family="Arial" font-size="10" '
                       f'fill="{overlay.color}">{_esc(label)}</text>')
        legend.append(overlay)
    out.extend(_legend(legend))
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ── Report charts ────────────────────────────────────────────────────


def _column(rows: Sequence[Dict[str, str]], x_key: str, y_key: str) -> List[Point]:
    points = []
    for row in rows:
        x, y = _num(row.get(x_key, "")), _num(row.get(y_key, ""))
        if x is not None and y is not None:
            points.append((x, y))
    return points


def fraction_points(iter_rows: Sequence[Dict[str, str]]) -> List[Point]:
    """Per-epoch share of rows with ``e_k < 0``."""
    totals: Dict[int, int] = defaultdict(int)
    negative: Dict[int, int] = defaultdict(int)
    for row in iter_rows:
        B = int(row["epoch"])
        totals[B] += 1
        if float(row["e_k"]) < 0.0:
            negative[B] += 1
    return [(float(B), negative[B] / totals[B]) for B in sorted(totals)]


def _write(path: Path, svg: str, written: List[Path]) -> None:
    path.write_text(svg, encoding="utf-8")
    written.append(path)


def write_plots(report_dir: Union[str, Path]) -> Tuple[List[Path], List[str]]:
    """Render every chart the report supports; returns ``(written, notices)``.

    Raises :class:`MissingReportError` when epochs.csv or iters.csv is absent.
    """
    out = Path(report_dir)
    epochs = read_rows(out / EPOCHS_CSV)
    iters = read_rows(out / ITERS_CSV)
    written: List[Path] = []
    notices: List[str] = []

    _write(out / DISTANCE_SVG, line_chart(
        "Distance to reference point", "epoch", "||x_nB - x*||",
        [Series("distance", _column(epochs, "epoch", "dist"))], log_y=True,
    ), written)
    _write(out / RESIDUAL_SVG, line_chart(
        "Epoch residual e_B", "epoch", "e_B",
        [Series("e_B", _column(epochs, "epoch", "e_B"))], zero_line=True,
    ), written)
    _write(out / NORM_SVG, line_chart(
        "Weight norm", "epoch", "||x_nB||",
        [Series("norm", _column(epochs, "epoch", "weight_norm"))],
    ), written)

    if iters:
        _write(out / FRACTION_SVG, bar_chart(
            "Star-convex fraction per recorded epoch", "epoch", "fraction e_k < 0",
            Series("fraction", fraction_points(iters)),
            overlay=Series("full loss", _column(epochs, "epoch", "full_loss"), color=PALETTE[5]),
        ), written)
    else:
        notices.append(f"{ITERS_CSV} has no rows; {FRACTION_SVG} not written")

    subseq_path = out / SUBSEQ_CSV
    if subseq_path.is_file():
        rows = read_rows(subseq_path)
        by_v: Dict[int, List[Point]] = defaultdict(list)
        for row in rows:
            v = int(row["v"])
            if v < MAX_SUBSEQ_LINES:
                y = _num(row["pre_update"])
                if y is not None:
                    by_v[v].append((float(row["epoch"]), y))
        if by_v:
            series = [Series(f"v={v}", by_v[v], PALETTE[v % len(PALETTE)]) for v in sorted(by_v)]
            _write(out / SUBSEQ_SVG, line_chart(
                "Component loss along its sampling subsequence", "epoch", "l_v", series, log_y=True,
            ), written)

    for note in notices:
        logger.info(note)
    logger.debug("Wrote %d charts to %s", len(written), out)
    return written, notices
