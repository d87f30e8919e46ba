"""Plain-text SVG figures and CSV density tables.

Output depends only on the inputs (fixed number formatting, no
timestamps), so regenerated files are byte-identical.
"""
from __future__ import annotations

import csv
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .spectra import BinnedSpectrum

__all__ = ["render_mirror_svg", "render_bar_svg", "render_scatter_svg", "ce_density_table", "write_density_csv"]

_W, _H = 800, 480
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _f(x: float) -> str:
    return f"{x:.2f}"


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
    ]


def _write(path, lines: list[str]) -> None:
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def render_mirror_svg(real: BinnedSpectrum, predicted: BinnedSpectrum, path, title: str = "") -> None:
    """Real spectrum drawn upward, prediction mirrored downward."""
    if not real.same_grid(predicted):
        raise ValueError("real and predicted spectra use different bin configurations")
    lines = _header(title or "real (top) vs predicted (bottom)")
    x0, x1 = _ML, _W - _MR
    y_top, y_bot = _MT, _H - _MB
    mid = (y_top + y_bot) / 2
    half = mid - y_top
    nz = np.flatnonzero((real.bins > 0) | (predicted.bins > 0))
    lo = real.mz_min
    hi = real.mz_min + real.m * real.bin_width
    if nz.size:
        lo = real.centers[nz[0]] - 10 * real.bin_width
        hi = real.centers[nz[-1]] + 10 * real.bin_width
        lo = max(lo, real.mz_min)

    def sx(mz):
        return x0 + (mz - lo) / (hi - lo) * (x1 - x0)

    lines.append(f'<line x1="{x0}" y1="{_f(mid)}" x2="{x1}" y2="{_f(mid)}" stroke="black"/>')
    lines.append(f'<line x1="{x0}" y1="{y_top}" x2="{x0}" y2="{y_bot}" stroke="black"/>')
    for spec, sign, color in ((real, -1, "#1f4e9c"), (predicted, 1, "#c0392b")):
        top = spec.bins.max()
        if top <= 0:
            continue
        for k in np.flatnonzero(spec.bins > 0):
            x = sx(spec.centers[k])
            y = mid + sign * half * spec.bins[k] / top
            lines.append(f'<line x1="{_f(x)}" y1="{_f(mid)}" x2="{_f(x)}" y2="{_f(y)}" stroke="{color}" stroke-width="1.5"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        mz = lo + frac * (hi - lo)
        lines.append(
            f'<text x="{_f(sx(mz))}" y="{y_bot + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{mz:.0f}</text>'
        )
    for frac, label in ((-1.0, "1.0"), (0.0, "0"), (1.0, "1.0")):
        y = mid + frac * half
        lines.append(
            f'<text x="{x0 - 6}" y="{_f(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="11">{label}</text>'
        )
    lines.append(
        f'<text x="{(x0 + x1) // 2}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" font-size="13">m/z</text>'
    )
    lines.append(
        f'<text x="18" y="{_f(mid)}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {_f(mid)})">relative intensity</text>'
    )
    _write(path, lines)


def render_bar_svg(labels: Sequence[str], values: Sequence[float], path, title: str = "", ylabel: str = "") -> None:
    lines = _header(title)
    x0, x1 = _ML, _W - _MR
    y_top, y_bot = _MT, _H - _MB
    vmax = max([float(v) for v in values] + [1e-12])
    n = max(len(values), 1)
    slot = (x1 - x0) / n
    lines.append(f'<line x1="{x0}" y1="{y_bot}" x2="{x1}" y2="{y_bot}" stroke="black"/>')
    lines.append(f'<line x1="{x0}" y1="{y_top}" x2="{x0}" y2="{y_bot}" stroke="black"/>')
    for k, (label, v) in enumerate(zip(labels, values)):
        h = (y_bot - y_top) * float(v) / vmax
        x = x0 + k * slot + 0.15 * slot
        lines.append(f'<rect x="{_f(x)}" y="{_f(y_bot - h)}" width="{_f(0.7 * slot)}" height="{_f(h)}" fill="#4a7ebb"/>')
        lines.append(
            f'<text x="{_f(x + 0.35 * slot)}" y="{y_bot + 18}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(str(label))}</text>'
        )
        lines.append(
            f'<text x="{_f(x + 0.35 * slot)}" y="{_f(y_bot - h - 4)}" text-anchor="middle" font-family="sans-serif" font-size="11">{float(v):.2f}</text>'
        )
    if ylabel:
        y = (y_top + y_bot) / 2
        lines.append(
            f'<text x="18" y="{_f(y)}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {_f(y)})">{escape(ylabel)}</text>'
        )
    _write(path, lines)


def render_scatter_svg(x: Sequence[float], y: Sequence[float], path, title: str = "", xlabel: str = "", ylabel: str = "") -> None:
    lines = _header(title)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x0, x1 = _ML, _W - _MR
    y_top, y_bot = _MT, _H - _MB
    xl, xh = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    yl, yh = (float(y.min()), float(y.max())) if y.size else (0.0, 1.0)
    xh = xh if xh > xl else xl + 1.0
    yh = yh if yh > yl else yl + 1.0
    lines.append(f'<line x1="{x0}" y1="{y_bot}" x2="{x1}" y2="{y_bot}" stroke="black"/>')
    lines.append(f'<line x1="{x0}" y1="{y_top}" x2="{x0}" y2="{y_bot}" stroke="black"/>')
    for a, b in zip(x, y):
        px = x0 + (a - xl) / (xh - xl) * (x1 - x0)
        py = y_bot - (b - yl) / (yh - yl) * (y_bot - y_top)
        lines.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="2.5" fill="#c0392b" fill-opacity="0.4"/>')
    lines.append(f'<text x="{x0}" y="{y_bot + 18}" font-family="sans-serif" font-size="11">{xl:.0f}</text>')
    lines.append(f'<text x="{x1}" y="{y_bot + 18}" text-anchor="end" font-family="sans-serif" font-size="11">{xh:.0f}</text>')
    lines.append(f'<text x="{x0 - 6}" y="{y_bot}" text-anchor="end" font-family="sans-serif" font-size="11">{yl:.0f}</text>')
    lines.append(f'<text x="{x0 - 6}" y="{y_top + 8}" text-anchor="end" font-family="sans-serif" font-size="11">{yh:.0f}</text>')
    lines.append(f'<text x="{(x0 + x1) // 2}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    my = (y_top + y_bot) / 2
    lines.append(
        f'<text x="18" y="{_f(my)}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {_f(my)})">{escape(ylabel)}</text>'
    )
    _write(path, lines)


def ce_density_table(energies: Sequence[float], mean_mz: Sequence[float], mz_bin_width: float = 25.0) -> tuple[list[float], list[float], np.ndarray]:
    """Counts of (energy, mean m/z bin) pairs: rows are energies, columns m/z bins."""
    energies = np.asarray(energies, dtype=float)
    mean_mz = np.asarray(mean_mz, dtype=float)
    ok = np.isfinite(mean_mz)
    energies, mean_mz = energies[ok], mean_mz[ok]
    ce_values = sorted(set(energies.tolist()))
    top = float(mean_mz.max()) if mean_mz.size else 0.0
    n_cols = int(top // mz_bin_width) + 1
    counts = np.zeros((len(ce_values), n_cols), dtype=np.int64)
    for e, m in zip(energies, mean_mz):
        counts[ce_values.index(e), int(m // mz_bin_width)] += 1
    edges = [k * mz_bin_width for k in range(n_cols)]
    return ce_values, edges, counts


def write_density_csv(path, ce_values, edges, counts) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["collision_energy"] + [f"mz_{e:g}" for e in edges])
        for ce, row in zip(ce_values, counts):
            w.writerow([f"{ce:g}"] + [int(c) for c in row])
