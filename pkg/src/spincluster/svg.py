"""Dependency-free SVG emitters for traces and site maps."""

from __future__ import annotations

from xml.sax.saxutils import escape

W, H = 640, 420
MARGIN = 60
SPIN_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return format(v, ".6g")


def _scale(lo, hi, a, b):
    span = (hi - lo) or 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _frame(title: str, xlabel: str, ylabel: str, xr, yr) -> list[str]:
    x0, x1 = xr
    y0, y1 = yr
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN // 2}" width="{W - 1.5 * MARGIN}" height="{H - 1.5 * MARGIN}" '
        'fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
        f'<text x="{MARGIN}" y="{H - MARGIN + 16}" font-size="10">{_fmt(x0)}</text>',
        f'<text x="{W - MARGIN / 2}" y="{H - MARGIN + 16}" text-anchor="end" font-size="10">{_fmt(x1)}</text>',
        f'<text x="{MARGIN - 4}" y="{H - MARGIN}" text-anchor="end" font-size="10">{_fmt(y0)}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN // 2 + 10}" text-anchor="end" font-size="10">{_fmt(y1)}</text>',
    ]
    return out


def _axes(xs, ys):
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if y0 == y1:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = _scale(x0, x1, MARGIN, W - MARGIN / 2)
    sy = _scale(y0, y1, H - MARGIN, MARGIN / 2)
    return (x0, x1), (y0, y1), sx, sy


def trace_svg(traces, title: str = "", xlabel: str = "x", ylabel: str = "P0") -> str:
    """Line plot of one or more (label, xs, ys) series sharing axes."""
    all_x = [v for _, xs, _ in traces for v in xs]
    all_y = [v for _, _, ys in traces for v in ys]
    xr, yr, sx, sy = _axes(all_x, all_y)
    out = _frame(title, xlabel, ylabel, xr, yr)
    for k, (label, xs, ys) in enumerate(traces):
        color = SPIN_COLORS[k % len(SPIN_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - MARGIN}" y="{MARGIN // 2 + 16 * (k + 1)}" text-anchor="end" '
                   f'font-size="11" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def site_map_svg(maps, title: str = "site map") -> str:
    """(r_perp, z) map: grey circles for all sites, per-spin filled dots for the
    68 % set and open rings for the 95 % set.  ``maps`` is a list of
    (label, circles) with circles from ``lattice.project_rperp``."""
    base = maps[0][1]
    xs = [c.r_perp * 1e9 for c in base] + [0.0]
    ys = [c.z * 1e9 for c in base]
    xr, yr, sx, sy = _axes(xs, ys)
    out = _frame(title, "r_perp (nm)", "z (nm)", xr, yr)
    for c in base:
        out.append(f'<circle cx="{sx(c.r_perp * 1e9):.2f}" cy="{sy(c.z * 1e9):.2f}" r="2" fill="#bbbbbb"/>')
    for k, (label, circles) in enumerate(maps):
        color = SPIN_COLORS[k % len(SPIN_COLORS)]
        for c in circles:
            cx, cy = sx(c.r_perp * 1e9), sy(c.z * 1e9)
            if c.level == "68":
                out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{color}"/>')
            elif c.level == "95":
                out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="none" '
                           f'stroke="{color}" stroke-width="1.2"/>')
        out.append(f'<text x="{W - MARGIN}" y="{MARGIN // 2 + 16 * (k + 1)}" text-anchor="end" '
                   f'font-size="11" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
