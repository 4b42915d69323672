"""Static SVG line charts of final-epoch losses from experiment records."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

SELECTORS = {
    "loss_vs_depth": ("number of residual conv layers H", lambda s: float(s.depth)),
    "loss_vs_filters": ("filters per layer F", lambda s: float(s.filters)),
    "loss_vs_ratio": ("depth/width ratio C/F", lambda s: s.depth / s.filters),
}
COLORS = {"sequential": "#d62728", "parallel": "#1f77b4"}
DASHES = {"train": None, "val": "6,4"}

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=30, bottom=55)


def collect_series(records, selector: str) -> dict[tuple[str, str], list[tuple[float, float]]]:
    """Map (variant, split) -> sorted (x, final loss) points; duplicates at one x are averaged."""
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}; choose from {sorted(SELECTORS)}")
    records = list(records)
    if not records:
        raise ValueError("no records to plot")
    _, xfun = SELECTORS[selector]
    buckets: dict[tuple[str, str, float], list[float]] = {}
    for rec in records:
        if not rec.metrics:
            raise ValueError(f"record {rec.key} has no epochs: nothing to plot")
        x = xfun(rec.spec)
        final = rec.metrics[-1]
        buckets.setdefault((rec.spec.variant, "train", x), []).append(final.train_loss)
        buckets.setdefault((rec.spec.variant, "val", x), []).append(final.val_loss)
    series: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for (variant, split, x), losses in sorted(buckets.items()):
        y = losses[0] if len(losses) == 1 else float(np.mean(losses))
        series.setdefault((variant, split), []).append((x, y))
    return series


def _fmt_x(x: float) -> str:
    if x >= 1 and float(x).is_integer():
        return str(int(x))
    return f"1/{round(1 / x)}" if (1 / x).is_integer() else f"{x:.3g}"


def render_svg(series, x_label: str, title: str = "") -> str:
    xs = sorted({x for pts in series.values() for x, _ in pts})
    ys = [y for pts in series.values() for _, y in pts]
    # powers-of-two grids read best on a log2 axis
    lx = [math.log2(x) for x in xs]
    x0, x1 = min(lx), max(lx)
    if x0 == x1:
        x0, x1 = x0 - 1, x1 + 1
    y0, y1 = min(ys), max(ys)
    pad = 0.05 * (y1 - y0) if y1 > y0 else max(abs(y0) * 0.1, 0.1)
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (math.log2(x) - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    left, bottom = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<rect x="{left}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for x in xs:
        X = px(x)
        out.append(f'<line x1="{X:.2f}" y1="{bottom}" x2="{X:.2f}" y2="{bottom + 5}" stroke="#444"/>')
        out.append(f'<text x="{X:.2f}" y="{bottom + 18}" text-anchor="middle">{_fmt_x(x)}</text>')
    for t in np.linspace(y0, y1, 6):
        Y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text transform="translate(16 {MARGIN["top"] + ph / 2:.2f}) rotate(-90)" '
               f'text-anchor="middle">cross-entropy loss</text>')

    for i, ((variant, split), pts) in enumerate(sorted(series.items())):
        color = COLORS.get(variant, "black")
        dash = f' stroke-dasharray="{DASHES[split]}"' if DASHES.get(split) else ""
        coords = " ".join(f"{px(x):.4f},{py(y):.4f}" for x, y in pts)
        name = f"{variant}-{split}"
        out.append(f'<g class="series" id="{name}">')
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.4f}" cy="{py(y):.4f}" r="3" fill="{color}"/>')
        out.append("</g>")
        ly = MARGIN["top"] + 14 + 18 * i
        lx0 = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx0}" y1="{ly}" x2="{lx0 + 24}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        label = f"{variant} ({'T' if split == 'train' else 'V'})"
        out.append(f'<text x="{lx0 + 30}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(records, selector: str, output) -> Path:
    """Write an SVG of final train (solid) / validation (dashed) loss per variant."""
    series = collect_series(records, selector)
    x_label, _ = SELECTORS[selector]
    output = Path(output)
    output.write_text(render_svg(series, x_label, selector.replace("_", " ")))
    return output
