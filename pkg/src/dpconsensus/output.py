"""Result persistence: summary JSON, trace/estimate CSVs, and SVG plots.

Everything here is byte-deterministic: keys are sorted, floats are
printed with 17 significant digits (round-trippable), and the SVG writer
emits fixed-precision coordinates with no timestamps or generated ids.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import NumericError

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def fmt(x) -> str:
    """17-significant-digit decimal form, exact on round trip."""
    return format(float(x), ".17g")


def write_summary(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")
    except OSError as exc:
        raise NumericError(f"cannot write {path}: {exc}") from exc


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return fmt(v)
    return str(v)


def write_trace_csv(path, trace) -> None:
    """Long-format trace: one row per (step, agent, component)."""
    steps, n_agents, n = trace.theta.shape
    r = trace.u.shape[2]
    rows = []
    for k in range(steps):
        for i in range(n_agents):
            for j in range(n):
                rows.append((k, i, j,
                             trace.x[k, i, j], trace.xhat[k, i, j],
                             trace.theta[k, i, j], trace.eta[k, i, j],
                             trace.u[k, i, j] if j < r else None))
    write_csv(path, ["k", "agent", "component", "x", "xhat", "theta", "eta", "u"], rows)


def write_norms_csv(path, trace) -> None:
    rows = [(k, trace.norm_delta[k], trace.norm_e[k])
            for k in range(len(trace.norm_delta))]
    write_csv(path, ["k", "norm_delta", "norm_e"], rows)


def write_ms_csv(path, ms) -> None:
    rows = [(k, ms.mean_delta_sq[k], ms.ci_delta[k], ms.mean_e_sq[k], ms.ci_e[k])
            for k in range(len(ms.mean_delta_sq))]
    write_csv(path, ["k", "mean_delta_sq", "ci_delta", "mean_e_sq", "ci_e"], rows)


def write_histogram_csv(path, hist) -> None:
    rows = [(hist.edges[i], hist.edges[i + 1],
             int(hist.counts_primary[i]), int(hist.counts_counterfactual[i]))
            for i in range(len(hist.counts_primary))]
    write_csv(path, ["bin_lo", "bin_hi", "count_primary", "count_counterfactual"], rows)


# ---------------------------------------------------------------------------
# Minimal deterministic SVG plots
# ---------------------------------------------------------------------------

_W, _H = 720.0, 480.0
_ML, _MR, _MT, _MB = 80.0, 24.0, 44.0, 56.0


def _f(x: float) -> str:
    return f"{x:.2f}"


def _axes(parts, title, xlabel, ylabel):
    parts.append(f'<rect x="0" y="0" width="{_W:g}" height="{_H:g}" fill="white"/>')
    parts.append(
        f'<text x="{_W / 2:g}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>')
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:g}" y="{_H - 12:g}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{xlabel}</text>')
    parts.append(
        f'<text x="18" y="{(_MT + _H - _MB) / 2:g}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {(_MT + _H - _MB) / 2:g})">{ylabel}</text>')
    parts.append(
        f'<rect x="{_ML:g}" y="{_MT:g}" width="{_W - _ML - _MR:g}" '
        f'height="{_H - _MT - _MB:g}" fill="none" stroke="black" stroke-width="1"/>')


def _x_map(lo, hi):
    span = hi - lo if hi > lo else 1.0
    return lambda v: _ML + (v - lo) / span * (_W - _ML - _MR)


def _y_map(lo, hi):
    span = hi - lo if hi > lo else 1.0
    return lambda v: _H - _MB - (v - lo) / span * (_H - _MT - _MB)


def svg_line_plot(path, series, title: str, xlabel: str, ylabel: str,
                  log_y: bool = True) -> None:
    """Line plot of (label, ys) pairs against the step index.

    With ``log_y`` the ordinate is log10; nonpositive values are clamped
    to a floor one decade below the smallest positive value.
    """
    all_y = np.concatenate([np.asarray(ys, dtype=float) for _, ys in series])
    n_max = max(len(ys) for _, ys in series)
    if log_y:
        pos = all_y[all_y > 0]
        floor = float(pos.min()) / 10.0 if pos.size else 1e-12
        top = float(pos.max()) if pos.size else 1.0
        y_lo, y_hi = math.log10(floor), math.log10(max(top, floor * 10))
    else:
        y_lo, y_hi = float(all_y.min()), float(all_y.max())
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
    xm = _x_map(0.0, float(n_max - 1))
    ym = _y_map(y_lo, y_hi)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W:g}" '
             f'height="{_H:g}" viewBox="0 0 {_W:g} {_H:g}">']
    _axes(parts, title, xlabel, ylabel)
    for tv, label in _y_ticks(y_lo, y_hi, log_y):
        y = ym(tv)
        parts.append(f'<line x1="{_ML:g}" y1="{_f(y)}" x2="{_W - _MR:g}" y2="{_f(y)}" '
                     f'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{_ML - 6:g}" y="{_f(y + 4)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{label}</text>')
    for tv in _lin_ticks(0.0, float(n_max - 1)):
        x = xm(tv)
        parts.append(f'<line x1="{_f(x)}" y1="{_H - _MB:g}" x2="{_f(x)}" '
                     f'y2="{_H - _MB + 4:g}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{_f(x)}" y="{_H - _MB + 18:g}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{tv:g}</text>')
    for idx, (label, ys) in enumerate(series):
        ys = np.asarray(ys, dtype=float)
        if log_y:
            pos = ys[ys > 0]
            floor = float(pos.min()) / 10.0 if pos.size else 1e-12
            vals = np.log10(np.maximum(ys, floor))
        else:
            vals = ys
        pts = " ".join(f"{_f(xm(k))},{_f(ym(v))}" for k, v in enumerate(vals))
        color = _COLORS[idx % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _MR - 8:g}" y="{_MT + 16 + 16 * idx:g}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def svg_histogram(path, edges, counts_a, counts_b, label_a: str, label_b: str,
                  title: str, xlabel: str) -> None:
    """Paired bars per bin on shared edges."""
    edges = np.asarray(edges, dtype=float)
    counts_a = np.asarray(counts_a)
    counts_b = np.asarray(counts_b)
    xm = _x_map(float(edges[0]), float(edges[-1]))
    top = max(1, int(max(counts_a.max(initial=0), counts_b.max(initial=0))))
    ym = _y_map(0.0, float(top))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W:g}" '
             f'height="{_H:g}" viewBox="0 0 {_W:g} {_H:g}">']
    _axes(parts, title, xlabel, "count")
    for tv in _lin_ticks(0.0, float(top)):
        y = ym(tv)
        parts.append(f'<line x1="{_ML:g}" y1="{_f(y)}" x2="{_W - _MR:g}" y2="{_f(y)}" '
                     f'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{_ML - 6:g}" y="{_f(y + 4)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{tv:g}</text>')
    for tv in _lin_ticks(float(edges[0]), float(edges[-1])):
        x = xm(tv)
        parts.append(f'<text x="{_f(x)}" y="{_H - _MB + 18:g}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{tv:.3g}</text>')
    for i in range(len(counts_a)):
        x0, x1 = xm(float(edges[i])), xm(float(edges[i + 1]))
        w = (x1 - x0) * 0.42
        for off, counts, color in ((0.04, counts_a, _COLORS[0]),
                                   (0.5, counts_b, _COLORS[1])):
            c = int(counts[i])
            if c == 0:
                continue
            y = ym(float(c))
            parts.append(
                f'<rect x="{_f(x0 + off * (x1 - x0))}" y="{_f(y)}" '
                f'width="{_f(w)}" height="{_f(_H - _MB - y)}" fill="{color}" '
                f'fill-opacity="0.7"/>')
    for idx, label in enumerate((label_a, label_b)):
        parts.append(f'<text x="{_W - _MR - 8:g}" y="{_MT + 16 + 16 * idx:g}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12" '
                     f'fill="{_COLORS[idx]}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _y_ticks(lo: float, hi: float, log_y: bool):
    if log_y:
        first = math.ceil(lo)
        last = math.floor(hi)
        step = max(1, (last - first) // 8 + 1)
        return [(float(d), f"1e{d:d}") for d in range(first, last + 1, step)]
    return [(v, f"{v:.3g}") for v in _lin_ticks(lo, hi)]


def _lin_ticks(lo: float, hi: float):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / 6.0
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(round(t, 12))
        t += step
    return ticks
