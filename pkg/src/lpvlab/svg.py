"""Minimal deterministic SVG output: line charts and boolean-mask heatmaps."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["line_chart", "mask_heatmap", "PALETTE"]

PALETTE = ["#1f4e9c", "#d9731a", "#2f8f46", "#b8322a", "#7048a3", "#8c5a3c", "#c2459a", "#5f5f5f",
           "#a3a321", "#1d9fb0"]

_W, _H = 640, 420
_L, _R, _T, _B = 70, 150, 40, 55


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, log):
    if log:
        return [10.0 ** k for k in range(int(np.ceil(lo)), int(np.floor(hi)) + 1)]
    span = hi - lo
    if span <= 0:
        return [lo]
    step = 10 ** np.floor(np.log10(span / 5))
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    first = np.ceil(lo / step) * step
    return list(np.arange(first, hi + 0.5 * step, step))


def _frame(title, xlabel, ylabel):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<text x="{_L + (_W - _L - _R) / 2}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{_T + (_H - _T - _B) / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_T + (_H - _T - _B) / 2})">{escape(ylabel)}</text>',
    ]


def line_chart(path, series, title="", xlabel="", ylabel="", xlog=False, ylim=None):
    """``series``: iterable of dicts with ``x``, ``y``, optional ``label``, ``color``, ``dashed``."""
    series = list(series)
    xs = [np.asarray(s["x"], dtype=float) for s in series]
    ys = [np.asarray(s["y"], dtype=float) for s in series]
    tx = [np.log10(x) if xlog else x for x in xs]
    fin_x = np.concatenate([t[np.isfinite(t)] for t in tx]) if tx else np.zeros(1)
    fin_y = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(1)
    x0, x1 = (float(fin_x.min()), float(fin_x.max())) if fin_x.size else (0.0, 1.0)
    y0, y1 = ylim if ylim is not None else ((float(fin_y.min()), float(fin_y.max())) if fin_y.size else (0.0, 1.0))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pw, ph = _W - _L - _R, _H - _T - _B

    def px(v):
        return _L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _T + (1.0 - (np.clip(v, y0, y1) - y0) / (y1 - y0)) * ph

    out = _frame(title, xlabel, ylabel)
    out.append(f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(x0, x1, xlog):
        v = np.log10(t) if xlog else t
        label = f"1e{int(round(v))}" if xlog else f"{t:g}"
        out.append(f'<line x1="{_fmt(px(v))}" y1="{_T + ph}" x2="{_fmt(px(v))}" y2="{_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(v))}" y="{_T + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{label}</text>')
    for t in _ticks(y0, y1, False):
        out.append(f'<line x1="{_L - 5}" y1="{_fmt(py(t))}" x2="{_L}" y2="{_fmt(py(t))}" stroke="black"/>')
        out.append(f'<text x="{_L - 8}" y="{_fmt(py(t) + 3)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{t:g}</text>')
    for k, (s, x, y) in enumerate(zip(series, tx, ys)):
        color = s.get("color", PALETTE[k % len(PALETTE)])
        dash = ' stroke-dasharray="6 4"' if s.get("dashed") else ""
        ok = np.isfinite(x) & np.isfinite(y)
        # split at gaps so missing samples do not draw spurious segments
        runs = np.split(np.flatnonzero(ok), np.flatnonzero(np.diff(np.flatnonzero(ok)) > 1) + 1)
        for run in runs:
            if run.size < 2:
                continue
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[run], y[run]))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>')
        if s.get("label"):
            ly = _T + 14 * (k + 1)
            out.append(f'<line x1="{_W - _R + 10}" y1="{ly - 4}" x2="{_W - _R + 30}" y2="{ly - 4}" '
                       f'stroke="{color}" stroke-width="2"{dash}/>')
            out.append(f'<text x="{_W - _R + 34}" y="{ly}" font-family="sans-serif" font-size="10">'
                       f'{escape(str(s["label"]))}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def mask_heatmap(path, box, layers, title="", xlabel="xi_1", ylabel="xi_2"):
    """Draw 2-D boolean masks (first axis horizontal) as coloured cells, later layers on top.

    ``layers``: iterable of ``(mask, color, label)``.
    """
    layers = list(layers)
    lo, hi = np.asarray(box.lower, dtype=float), np.asarray(box.upper, dtype=float)
    pw, ph = _W - _L - _R, _H - _T - _B
    side = min(pw, ph)
    out = _frame(title, xlabel, ylabel)
    out.append(f'<rect x="{_L}" y="{_T}" width="{side}" height="{side}" fill="#f4f4f4" stroke="black"/>')
    for k, (mask, color, label) in enumerate(layers):
        mask = np.asarray(mask, dtype=bool)
        nx, ny = mask.shape
        cw, ch = side / nx, side / ny
        for i in range(nx):
            # one rectangle per vertical run of set cells
            col = np.r_[False, mask[i], False].astype(np.int8)
            starts = np.flatnonzero(np.diff(col) == 1)
            stops = np.flatnonzero(np.diff(col) == -1)
            for a, b in zip(starts, stops):
                out.append(f'<rect x="{_fmt(_L + i * cw)}" y="{_fmt(_T + side - b * ch)}" width="{_fmt(cw)}" '
                           f'height="{_fmt((b - a) * ch)}" fill="{color}"/>')
        ly = _T + 14 * (k + 1)
        out.append(f'<rect x="{_L + side + 20}" y="{ly - 9}" width="12" height="10" fill="{color}"/>')
        out.append(f'<text x="{_L + side + 36}" y="{ly}" font-family="sans-serif" font-size="10">'
                   f'{escape(label)}</text>')
    for v, pos in ((lo[0], _L), (hi[0], _L + side)):
        out.append(f'<text x="{_fmt(pos)}" y="{_T + side + 16}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{v:g}</text>')
    for v, pos in ((lo[1], _T + side), (hi[1], _T)):
        out.append(f'<text x="{_L - 6}" y="{_fmt(pos + 3)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{v:g}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
