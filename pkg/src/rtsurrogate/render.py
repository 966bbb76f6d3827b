"""Minimal SVG line charts for the CSV tables the commands write."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 150, "top": 40, "bottom": 50}


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               log_y: bool = False, markers: bool = False) -> str:
    """Render ``{name: (xs, ys)}`` as an SVG document string."""
    def ty(v):
        return math.log10(v) if log_y else v

    points = {name: [(float(x), ty(float(y))) for x, y in zip(xs, ys)
                     if not (log_y and float(y) <= 0)]
              for name, (xs, ys) in series.items()}
    xs = [x for pts in points.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in points.values() for _, y in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * plot_w

    def py(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{plot_w}" height="{plot_h}" '
           f'fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.1f}" y="{HEIGHT - MARGIN["bottom"] + 15}" '
                   f'text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        label = f"{10 ** t:.2g}" if log_y else f"{t:.3g}"
        out.append(f'<text x="{MARGIN["left"] - 5}" y="{py(t) + 4:.1f}" '
                   f'text-anchor="end">{label}</text>')
    out.append(f'<text x="{MARGIN["left"] + plot_w / 2}" y="{HEIGHT - 10}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{MARGIN["top"] + plot_h / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {MARGIN["top"] + plot_h / 2})">{escape(ylabel)}</text>')
    for i, (name, pts) in enumerate(points.items()):
        color = COLORS[i % len(COLORS)]
        if pts:
            path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
            if markers:
                out.extend(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.5" fill="{color}"/>'
                           for x, y in pts)
        ly = MARGIN["top"] + 15 * (i + 1)
        lx = WIDTH - MARGIN["right"] + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 25}" y="{ly}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read(path: Path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def render_outflow(path: Path) -> str:
    rows = _read(path)
    pv = [float(r["pore_volumes"]) for r in rows]
    series = {name: (pv, [float(r[f"{name}_out"]) * 1e3 for r in rows])
              for name in ("na", "k", "ca", "cl")}
    return line_chart(series, f"Outflow: {path.stem}", "pore volumes", "mmol/kgw")


def render_grouped(path: Path, group: str, x: str, y: str, title: str, log_y=True) -> str:
    rows = _read(path)
    series = {}
    for r in rows:
        xs, ys = series.setdefault(r[group], ([], []))
        xs.append(float(r[x]))
        ys.append(float(r[y]))
    return line_chart(series, title, x, y, log_y=log_y, markers=True)


def render_ablation(path: Path) -> str:
    rows = _read(path)
    xs = list(range(len(rows)))
    chart = line_chart({"rollout error": (xs, [float(r["rollout_error"]) for r in rows])},
                       "Error per correction set (" + ", ".join(r["preset"] for r in rows) + ")",
                       "corrections added", "rollout error (mol/kgw)", log_y=True, markers=True)
    return chart


def render_directory(out_dir) -> list[Path]:
    """Write an SVG next to every known CSV table under ``out_dir``."""
    out_dir = Path(out_dir)
    written = []
    for path in sorted(out_dir.rglob("*.csv")):
        name = path.name
        if name.endswith("_outflow.csv"):
            svg = render_outflow(path)
        elif name == "ablation.csv":
            svg = render_ablation(path)
        elif name == "sampling_sweep.csv":
            svg = render_grouped(path, "sampler", "size", "rollout_error",
                                 "Rollout error by sampler and dataset size")
        elif name == "bench.csv":
            svg = render_grouped(path, "model", "batch_size", "seconds_per_instance",
                                 "Prediction time per instance")
        else:
            continue
        target = path.with_suffix(".svg")
        target.write_text(svg)
        written.append(target)
    return written
