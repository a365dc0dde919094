"""Deterministic vector-graphics rendering of forecast overlays.

The output is a self-contained SVG document built from formatted strings:
no timestamps, no randomness, two-decimal coordinates — identical inputs
produce byte-identical files. Data series are the only <polyline>
elements (axes, ticks, and legend swatches are <line>s), so a file for
one prediction series contains exactly two polylines: truth and
prediction.
"""

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 64, 16, 24, 44
TRUTH_COLOR = "#333333"
SERIES_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                 "#ff7f0e", "#8c564b", "#17becf", "#bcbd22")
TICK_COUNT = 5


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _tick_label(value: float) -> str:
    return f"{value:.4g}"


class _Frame:
    """Maps (step, value) data coordinates onto the pixel canvas."""

    def __init__(self, max_steps: int, lo: float, hi: float):
        if hi <= lo:                      # flat data still needs a y-range
            lo, hi = lo - 1.0, hi + 1.0
        pad = 0.05 * (hi - lo)
        self.lo, self.hi = lo - pad, hi + pad
        self.max_steps = max_steps

    def x(self, step: int) -> float:
        span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
        if self.max_steps == 1:
            return MARGIN_LEFT + span / 2
        return MARGIN_LEFT + (step - 1) / (self.max_steps - 1) * span

    def y(self, value: float) -> float:
        span = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
        frac = (value - self.lo) / (self.hi - self.lo)
        return HEIGHT - MARGIN_BOTTOM - frac * span


def _polyline(frame: _Frame, values, color: str) -> str:
    points = " ".join(
        f"{_fmt(frame.x(step))},{_fmt(frame.y(v))}"
        for step, v in enumerate(values, start=1))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{points}"/>')


def render_forecast_svg(truth, series, title: str = "Forecast") -> str:
    """SVG overlay of a ground-truth line and one line per named series.

    truth: 1-d values; series: [(label, 1-d values), ...]. Steps are
    1-based sample indices on the x axis. Raises ValueError on empty or
    non-finite input.
    """
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    series = [(str(label), np.asarray(v, dtype=np.float64).reshape(-1))
              for label, v in series]
    if truth.size == 0:
        raise ValueError("cannot plot an empty truth series")
    for label, values in series:
        if values.size == 0:
            raise ValueError(f"series {label!r} is empty")
    everything = np.concatenate([truth] + [v for _, v in series])
    if not np.all(np.isfinite(everything)):
        raise ValueError("plot values must be finite")

    max_steps = max([truth.size] + [v.size for _, v in series])
    frame = _Frame(max_steps, float(everything.min()), float(everything.max()))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH // 2}" y="16" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{title}</text>',
    ]

    x0, x1 = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    y0, y1 = HEIGHT - MARGIN_BOTTOM, MARGIN_TOP
    axis = 'stroke="#000000" stroke-width="1"'
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" {axis}/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" {axis}/>')

    for raw in np.linspace(1, max_steps, min(TICK_COUNT, max_steps)):
        step = int(round(raw))
        x = frame.x(step)
        parts.append(f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" '
                     f'y2="{y0 + 5}" {axis}/>')
        parts.append(f'<text x="{_fmt(x)}" y="{y0 + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{step}</text>')
    for value in np.linspace(frame.lo, frame.hi, TICK_COUNT):
        y = frame.y(value)
        parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(y)}" x2="{x0}" '
                     f'y2="{_fmt(y)}" {axis}/>')
        parts.append(f'<text x="{x0 - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">'
                     f'{_tick_label(value)}</text>')

    parts.append(_polyline(frame, truth, TRUTH_COLOR))
    for index, (label, values) in enumerate(series):
        parts.append(_polyline(frame, values,
                               SERIES_COLORS[index % len(SERIES_COLORS)]))

    legend_x = MARGIN_LEFT + 12
    legend_y = MARGIN_TOP + 8
    entries = [("truth", TRUTH_COLOR)] + [
        (label, SERIES_COLORS[i % len(SERIES_COLORS)])
        for i, (label, _) in enumerate(series)]
    for row, (label, color) in enumerate(entries):
        y = legend_y + 16 * row
        parts.append(f'<line x1="{legend_x}" y1="{y}" x2="{legend_x + 22}" '
                     f'y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{legend_x + 28}" y="{y + 4}" '
                     f'font-family="sans-serif" font-size="11">{label}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
