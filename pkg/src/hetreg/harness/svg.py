"""Minimal native SVG charts: multi-series line plots and value-mapped heat grids."""
import math
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
# viridis anchors
_CMAP = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]


def colormap(t):
    t = min(max(t, 0.0), 1.0) * (len(_CMAP) - 1)
    i = min(int(t), len(_CMAP) - 2)
    f = t - i
    r, g, b = (round(a + (b_ - a) * f) for a, b_ in zip(_CMAP[i], _CMAP[i + 1]))
    return f"#{r:02x}{g:02x}{b:02x}"


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.0e}"
    return f"{v:.3g}"


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        step = max(1, (b - a) // 6)
        return [10.0 ** k for k in range(a, b + 1, step) if lo <= 10.0 ** k <= hi]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-12 * abs(hi):
        out.append(round(v, 12))
        v += step
    return out


def _write(path, width, height, body):
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
           f'<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)


def line_chart(series, path, title="", xlabel="", ylabel="", logx=False, logy=False,
               width=640, height=400, bands=None, dashed=()):
    """``series``: {name: (xs, ys)}.  ``bands``: {name: (xs, lo, hi)} drawn as
    shaded areas under the matching series colour."""
    left, right, top, bottom = 64, 130, 30, 46
    pw, ph = width - left - right, height - top - bottom
    bands = bands or {}

    def keep(x, y):
        return (math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0))

    pts_all = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if keep(x, y)]
    for xs, lo, hi in bands.values():
        pts_all += [(x, y) for x, a, b in zip(xs, lo, hi) for y in (a, b) if keep(x, y)]
    if not pts_all:
        _write(path, width, height, [f'<text x="{width / 2}" y="{height / 2}">no data</text>'])
        return
    xmin, xmax = min(p[0] for p in pts_all), max(p[0] for p in pts_all)
    ymin, ymax = min(p[1] for p in pts_all), max(p[1] for p in pts_all)
    if xmax == xmin:
        xmax = xmin * 10 if logx else xmin + 1
    if ymax == ymin:
        ymax = ymin * 10 if logy else ymin + 1

    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)

    def px(x):
        return left + (tx(x) - tx(xmin)) / (tx(xmax) - tx(xmin)) * pw

    def py(y):
        return top + ph - (ty(y) - ty(ymin)) / (ty(ymax) - ty(ymin)) * ph

    body = [f'<text x="{left + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for v in _ticks(xmin, xmax, logx):
        x = px(v)
        body.append(f'<line x1="{x:.1f}" y1="{top + ph}" x2="{x:.1f}" y2="{top + ph + 4}" stroke="#333"/>')
        body.append(f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(ymin, ymax, logy):
        y = py(v)
        body.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        body.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')

    for k, (name, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        if name in bands:
            bx, lo, hi = bands[name]
            upper = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(bx, hi) if keep(x, y)]
            lower = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(bx, lo) if keep(x, y)]
            body.append(f'<polygon points="{" ".join(upper + lower[::-1])}" fill="{color}" '
                        f'fill-opacity="0.2" stroke="none"/>')
        pts = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if keep(x, y)]
        dash = ' stroke-dasharray="6 4"' if name in dashed else ""
        body.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = top + 14 + 16 * k
        body.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                    f'stroke="{color}" stroke-width="2"{dash}/>')
        body.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(str(name))}</text>')
    _write(path, width, height, body)


def heatmap(values, row_labels, col_labels, path, title="", xlabel="", ylabel="",
            vmin=None, vmax=None, log=False, cell=48, annotate=True):
    """``values[i][j]`` colours row i, column j.  Returns the (vmin, vmax) used."""
    flat = [v for row in values for v in row if v is not None and math.isfinite(v) and (not log or v > 0)]
    vmin = min(flat) if vmin is None and flat else (vmin if vmin is not None else 0.0)
    vmax = max(flat) if vmax is None and flat else (vmax if vmax is not None else 1.0)
    f = (lambda v: math.log10(v)) if log else (lambda v: v)
    span = (f(vmax) - f(vmin)) or 1.0
    left, top = 90, 34
    nr, nc = len(row_labels), len(col_labels)
    width, height = left + nc * cell + 90, top + nr * cell + 50
    body = [f'<text x="{left + nc * cell / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for i, row in enumerate(values):
        for j, v in enumerate(row):
            x, y = left + j * cell, top + i * cell
            ok = v is not None and math.isfinite(v) and (not log or v > 0)
            color = colormap((f(v) - f(vmin)) / span) if ok else "#cccccc"
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{color}" stroke="white"/>')
            if annotate:
                text = _fmt(v) if ok else "n/a"
                body.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                            f'fill="{"black" if ok and (f(v) - f(vmin)) / span > 0.6 else "white"}" '
                            f'font-size="9">{text}</text>')
    for i, lab in enumerate(row_labels):
        body.append(f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 4}" text-anchor="end">{escape(str(lab))}</text>')
    for j, lab in enumerate(col_labels):
        body.append(f'<text x="{left + j * cell + cell / 2}" y="{top + nr * cell + 16}" '
                    f'text-anchor="middle">{escape(str(lab))}</text>')
    body.append(f'<text x="{left + nc * cell / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(f'<text x="12" y="{top + nr * cell / 2}" text-anchor="middle" '
                f'transform="rotate(-90 12 {top + nr * cell / 2})">{escape(ylabel)}</text>')
    # colour bar
    bx = left + nc * cell + 20
    steps = 20
    bh = nr * cell / steps
    for k in range(steps):
        body.append(f'<rect x="{bx}" y="{top + (steps - 1 - k) * bh:.2f}" width="14" height="{bh + 0.5:.2f}" '
                    f'fill="{colormap(k / (steps - 1))}"/>')
    body.append(f'<text x="{bx + 18}" y="{top + 8}">{_fmt(vmax)}</text>')
    body.append(f'<text x="{bx + 18}" y="{top + nr * cell}">{_fmt(vmin)}</text>')
    _write(path, width, height, body)
    return vmin, vmax


def field_heatmap(grid, xs, ts, path, title="", log=True):
    """Dense (time x input) field drawn as thin strips; used for diagnostics traces."""
    flat = [v for row in grid for v in row if math.isfinite(v) and (not log or v > 0)]
    if not flat:
        _write(path, 300, 100, ['<text x="10" y="50">no data</text>'])
        return None
    vmin, vmax = min(flat), max(flat)
    f = (lambda v: math.log10(v)) if log else (lambda v: v)
    span = (f(vmax) - f(vmin)) or 1.0
    left, top, pw, rowh = 70, 30, 600, 22
    width, height = left + pw + 100, top + rowh * len(ts) + 40
    nx = len(xs)
    body = [f'<text x="{left + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for i, (t, row) in enumerate(zip(ts, grid)):
        y = top + i * rowh
        for j, v in enumerate(row):
            ok = math.isfinite(v) and (not log or v > 0)
            color = colormap((f(v) - f(vmin)) / span) if ok else "#cccccc"
            body.append(f'<rect x="{left + j * pw / nx:.2f}" y="{y}" width="{pw / nx + 0.3:.2f}" '
                        f'height="{rowh}" fill="{color}"/>')
        body.append(f'<text x="{left - 6}" y="{y + rowh / 2 + 4}" text-anchor="end">{_fmt(t)}</text>')
    body.append(f'<text x="{left}" y="{height - 20}">{_fmt(xs[0])}</text>')
    body.append(f'<text x="{left + pw}" y="{height - 20}" text-anchor="end">{_fmt(xs[-1])}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">x (rows: update)</text>')
    body.append(f'<text x="{left + pw + 10}" y="{top + 10}">max {_fmt(vmax)}</text>')
    body.append(f'<text x="{left + pw + 10}" y="{top + 26}">min {_fmt(vmin)}</text>')
    _write(path, width, height, body)
    return vmin, vmax
