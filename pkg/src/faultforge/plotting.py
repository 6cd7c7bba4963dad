"""Plain-SVG plots of sweep results on a logarithmic resistance axis."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .analysis import SweepResult
from .network import PHASES

COLORS = {"A": "#c0392b", "B": "#2c3e50", "C": "#2980b9", "P": "#27ae60", "Q": "#8e44ad"}
PANEL_W, PANEL_H = 560, 220
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 40


def _nice_range(values: list[float]) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi - lo < 1e-12:
        pad = max(abs(hi) * 0.1, 1e-3)
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def _panel(title: str, ylabel: str, xs: list[float], series: dict[str, list[float]], infeasible: list[bool], top: float) -> list[str]:
    x0, x1 = math.log10(xs[0]), math.log10(xs[-1])
    lo, hi = _nice_range([v for s in series.values() for v in s])
    left, right = MARGIN_L, PANEL_W - MARGIN_R
    y_top, y_bot = top + MARGIN_T, top + PANEL_H - MARGIN_B

    def px(x):
        return left + (math.log10(x) - x0) / (x1 - x0) * (right - left)

    def py(y):
        return y_bot - (y - lo) / (hi - lo) * (y_bot - y_top)

    out = [
        f'<text x="{left}" y="{top + 18}" font-size="13" font-weight="bold">{escape(title)}</text>',
        f'<rect x="{left}" y="{y_top}" width="{right - left}" height="{y_bot - y_top}" fill="none" stroke="#888"/>',
    ]
    # shade grid points without a feasible solution
    for k, bad in enumerate(infeasible):
        if bad:
            a = (px(xs[max(k - 1, 0)]) + px(xs[k])) / 2
            b = (px(xs[min(k + 1, len(xs) - 1)]) + px(xs[k])) / 2
            out.append(f'<rect x="{a:.2f}" y="{y_top}" width="{max(b - a, 2):.2f}" height="{y_bot - y_top}" fill="#f5b7b1" opacity="0.6"/>')
    for dec in range(math.floor(x0), math.ceil(x1) + 1):
        if x0 - 1e-9 <= dec <= x1 + 1e-9:
            gx = px(10.0**dec)
            out.append(f'<line x1="{gx:.2f}" y1="{y_top}" x2="{gx:.2f}" y2="{y_bot}" stroke="#ddd"/>')
            out.append(f'<text x="{gx:.2f}" y="{y_bot + 15}" font-size="10" text-anchor="middle">1e{dec}</text>')
    for k in range(5):
        val = lo + (hi - lo) * k / 4
        gy = py(val)
        out.append(f'<line x1="{left}" y1="{gy:.2f}" x2="{right}" y2="{gy:.2f}" stroke="#eee"/>')
        out.append(f'<text x="{left - 5}" y="{gy + 3:.2f}" font-size="10" text-anchor="end">{_fmt(val)}</text>')
    out.append(f'<text x="{(left + right) / 2}" y="{y_bot + 32}" font-size="11" text-anchor="middle">fault resistance (ohm)</text>')
    out.append(f'<text x="15" y="{(y_top + y_bot) / 2}" font-size="11" text-anchor="middle" transform="rotate(-90 15 {(y_top + y_bot) / 2})">{escape(ylabel)}</text>')
    for n, (name, ys) in enumerate(series.items()):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        color = COLORS.get(name[-1:], "#555")
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{right - 60}" y="{y_top + 14 + 13 * n}" font-size="10" fill="{color}">{escape(name)}</text>')
    return out


def sweep_svg(result: SweepResult) -> str:
    rows = result.rows
    xs = [r.r_fault_ohm for r in rows]
    bad = [not r.feasible for r in rows]
    faulted = result.plan.phases or tuple(sorted({p for r in rows for p in r.fault_current_a}))
    panels = [
        ("Fault current", "A", {f"I{p}": [r.fault_current_a.get(p, math.nan) for r in rows] for p in faulted}),
        (f"Voltage at {result.plan.bus}", "pu", {f"V{p}": [abs(r.bus_voltage_pu[p]) if p in r.bus_voltage_pu else math.nan for r in rows] for p in PHASES}),
        (
            f"Active power of {result.element}",
            "pu",
            {f"P{p}": [r.power_pu[p][0] if p in r.power_pu else math.nan for r in rows] for p in PHASES},
        ),
        (
            f"Reactive power of {result.element}",
            "pu",
            {f"Q{p}": [r.power_pu[p][1] if p in r.power_pu else math.nan for r in rows] for p in PHASES},
        ),
    ]
    height = PANEL_H * len(panels)
    body = []
    for k, (title, unit, series) in enumerate(panels):
        body += _panel(title, unit, xs, series, bad, k * PANEL_H)
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}" font-family="sans-serif">',
            '<rect width="100%" height="100%" fill="white"/>',
            *body,
            "</svg>",
            "",
        ]
    )


def write_sweep_svg(result: SweepResult, path: str | Path) -> None:
    Path(path).write_text(sweep_svg(result))
