"""Minimal deterministic SVG line charts for sensitivity sweeps."""

from __future__ import annotations

from xml.sax.saxutils import escape

SERIES = (("miou", "#1f77b4"), ("fp_rate", "#ff7f0e"), ("fn_rate", "#2ca02c"))
PANEL_W, PANEL_H, PAD = 360, 240, 40


def _panel(x0, title, xs, rows, xlabel):
    parts = [f'<g transform="translate({x0},0)">']
    parts.append(f'<text x="{PANEL_W / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    left, top, right, bottom = PAD, PAD, PANEL_W - 10, PANEL_H - PAD
    parts.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="#999"/>')
    for frac in (0.0, 0.5, 1.0):
        y = bottom - frac * (bottom - top)
        parts.append(f'<text x="{left - 4}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{frac:.1f}</text>')

    def sx(i):
        return left + (right - left) * (i / (len(xs) - 1) if len(xs) > 1 else 0.5)

    for i, x in enumerate(xs):
        parts.append(f'<text x="{sx(i):.1f}" y="{bottom + 14}" text-anchor="middle" font-size="10">{x}</text>')
    parts.append(f'<text x="{(left + right) / 2}" y="{bottom + 30}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>')
    for key, colour in SERIES:
        pts = " ".join(f"{sx(i):.1f},{bottom - getattr(r, key) * (bottom - top):.1f}" for i, r in enumerate(rows))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"/>')
    parts.append("</g>")
    return parts


def sensitivity_svg(rows, fixed_k: int, fixed_steps: int) -> str:
    """Two panels: metrics vs k at ``fixed_steps``, and vs T at ``fixed_k``."""
    by_k = sorted((r for r in rows if r.steps == fixed_steps), key=lambda r: r.k)
    by_t = sorted((r for r in rows if r.k == fixed_k), key=lambda r: r.steps)
    width = 2 * PANEL_W + 20
    height = PANEL_H + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">']
    out += _panel(0, f"(a) top-k, T={fixed_steps}", [r.k for r in by_k], by_k, "k")
    out += _panel(PANEL_W + 20, f"(b) diffusion steps, k={fixed_k}", [r.steps for r in by_t], by_t, "T")
    for i, (key, colour) in enumerate(SERIES):
        out.append(f'<text x="{60 + 110 * i}" y="{height - 6}" font-size="11" fill="{colour}">{key}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
