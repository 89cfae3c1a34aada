"""Dependency-free SVG scatter plots for per-sample pose errors."""

from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def pose_scatter_svg(series, width=480, height=360, title="Per-sample pose errors"):
    """series: list of (label, [(translation_mm, angle_deg), ...])."""
    pad = 48
    pts_all = [p for _, pts in series for p in pts]
    xmax = max([p[0] for p in pts_all] + [1e-6]) * 1.1
    ymax = max([p[1] for p in pts_all] + [1e-6]) * 1.1

    def sx(x):
        return pad + x / xmax * (width - 2 * pad)

    def sy(y):
        return height - pad - y / ymax * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="11">translation error [mm]</text>',
        f'<text x="14" y="{height / 2}" font-size="11" transform="rotate(-90 14 {height / 2})" text-anchor="middle">angular error [deg]</text>',
    ]
    for i in range(5):
        xv = xmax * i / 4
        yv = ymax * i / 4
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{height - pad + 14}" text-anchor="middle" font-size="9">{xv:.2f}</text>'
        )
        parts.append(
            f'<text x="{pad - 6}" y="{sy(yv) + 3:.1f}" text-anchor="end" font-size="9">{yv:.2f}</text>'
        )
    for i, (label, pts) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}" fill-opacity="0.7"/>')
        parts.append(
            f'<text x="{width - pad}" y="{pad + 14 * i}" text-anchor="end" font-size="11" fill="{color}">{escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
