"""Minimal SVG output: scatter plots and quiver plots, no dependencies."""
import numpy as np

SIZE = 480
PAD = 30


def _frame(xs, ys):
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    span = SIZE - 2 * PAD

    def to_px(x, y):
        return PAD + (x - x0) / (x1 - x0) * span, SIZE - PAD - (y - y0) / (y1 - y0) * span

    return to_px, (x0, x1, y0, y1)


def _document(body, bounds, title):
    x0, x1, y0, y1 = bounds
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n'
        f'<text x="{PAD}" y="18" font-size="12" font-family="sans-serif">{title}</text>\n'
        f'<rect x="{PAD}" y="{PAD}" width="{SIZE - 2 * PAD}" height="{SIZE - 2 * PAD}" fill="none" stroke="#888"/>\n'
        f'<text x="{PAD}" y="{SIZE - 8}" font-size="10" font-family="sans-serif">'
        f'x [{x0:.3g}, {x1:.3g}]  y [{y0:.3g}, {y1:.3g}]</text>\n'
        + body + "</svg>\n"
    )


def scatter_svg(path, points, title="samples", max_points=5000):
    pts = np.asarray(points, dtype=np.float64)[:max_points, :2]
    to_px, bounds = _frame(pts[:, 0], pts[:, 1])
    body = "".join(
        '<circle cx="%.2f" cy="%.2f" r="1.2" fill="#1f4e99" fill-opacity="0.5"/>\n' % to_px(x, y)
        for x, y in pts
    )
    with open(path, "w") as fh:
        fh.write(_document(body, bounds, title))


def quiver_svg(path, a, b, da, db, title="gradient field"):
    """Arrows along the negative gradient, lengths normalized to the grid spacing."""
    a, b, da, db = (np.asarray(v, dtype=np.float64) for v in (a, b, da, db))
    to_px, bounds = _frame(a, b)
    mag = np.hypot(da, db)
    n = max(int(np.sqrt(len(a))), 2)
    cell = (SIZE - 2 * PAD) / n * 0.8
    body = []
    for ai, bi, dai, dbi, m in zip(a, b, da, db, mag):
        if not np.isfinite(m) or m == 0:
            continue
        px, py = to_px(ai, bi)
        ex, ey = px - dai / m * cell, py + dbi / m * cell
        shade = int(200 * (1 - min(1.0, np.log1p(m) / np.log1p(mag.max()))))
        body.append(f'<line x1="{px:.2f}" y1="{py:.2f}" x2="{ex:.2f}" y2="{ey:.2f}" '
                    f'stroke="rgb({shade},{shade},{shade})" stroke-width="1"/>\n'
                    f'<circle cx="{ex:.2f}" cy="{ey:.2f}" r="1" fill="black"/>\n')
    with open(path, "w") as fh:
        fh.write(_document("".join(body), bounds, title))
