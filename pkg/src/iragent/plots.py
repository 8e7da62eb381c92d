"""Self-contained SVG figures: raw vs processed spectra and a feature scatter.

Output depends only on the input numbers (fixed formatting, no timestamps,
no random ids), so identical input gives byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .core import FeatureMatrix, SpectralDataset

WIDTH, HEIGHT = 640, 480
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _scale(values: np.ndarray, lo_px: float, hi_px: float):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: lo_px + (np.asarray(v, float) - lo) / (hi - lo) * (hi_px - lo_px), (lo, hi)


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def _axes(x0, y0, x1, y1, xr, yr, xlabel, ylabel) -> list[str]:
    return [
        f'<rect x="{_f(x0)}" y="{_f(y1)}" width="{_f(x1 - x0)}" height="{_f(y0 - y1)}" '
        'fill="none" stroke="#333"/>',
        f'<text x="{_f(x0)}" y="{_f(y0 + 16)}">{xr[0]:.4g}</text>',
        f'<text x="{_f(x1)}" y="{_f(y0 + 16)}" text-anchor="end">{xr[1]:.4g}</text>',
        f'<text x="{_f(x0 - 4)}" y="{_f(y0)}" text-anchor="end">{yr[0]:.4g}</text>',
        f'<text x="{_f(x0 - 4)}" y="{_f(y1 + 10)}" text-anchor="end">{yr[1]:.4g}</text>',
        f'<text x="{_f((x0 + x1) / 2)}" y="{_f(y0 + 30)}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="{_f(x0 - 40)}" y="{_f((y0 + y1) / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 {_f(x0 - 40)} {_f((y0 + y1) / 2)})">{escape(ylabel)}</text>',
    ]


def _polyline(xs, ys, color) -> str:
    pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(xs, ys))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>'


def spectrum_pair_svg(wavelengths, raw, processed, title: str) -> str:
    """Raw spectrum (top panel) above its processed version (bottom panel)."""
    wl = np.asarray(wavelengths, float)
    out = _header(title)
    panel_h = (HEIGHT - 2 * MARGIN - 30) / 2
    for k, (y, label, color) in enumerate(((raw, "raw", PALETTE[0]), (processed, "processed", PALETTE[1]))):
        top = MARGIN + k * (panel_h + 30)
        bottom = top + panel_h
        sx, xr = _scale(wl, MARGIN + 10, WIDTH - 20)
        sy, yr = _scale(np.asarray(y, float), bottom, top)
        out += _axes(MARGIN + 10, bottom, WIDTH - 20, top, xr, yr,
                     "wavelength (nm)" if k == 1 else "", label)
        out.append(_polyline(sx(wl), sy(y), color))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(features: FeatureMatrix, labels: Sequence, title: str = "feature scatter") -> str:
    """First two feature dimensions, one colour per label."""
    X = features.rows
    xs = X[:, 0]
    ys = X[:, 1] if features.dim > 1 else np.zeros(len(features))
    out = _header(title)
    x0, x1, y0, y1 = MARGIN + 10, WIDTH - 120, HEIGHT - MARGIN, MARGIN
    sx, xr = _scale(xs, x0 + 6, x1 - 6)
    sy, yr = _scale(ys, y0 - 6, y1 + 6)
    names = features.feature_names
    out += _axes(x0, y0, x1, y1, xr, yr, names[0], names[1] if features.dim > 1 else "")
    groups = sorted({str(v) for v in labels})
    colour = {g: PALETTE[i % len(PALETTE)] for i, g in enumerate(groups)}
    for sid, x, y, lab in zip(features.ids, sx(xs), sy(ys), labels):
        out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="3.5" fill="{colour[str(lab)]}">'
                   f"<title>{escape(sid)}</title></circle>")
    for i, g in enumerate(groups):
        y = y1 + 14 + 16 * i
        out.append(f'<circle cx="{x1 + 16}" cy="{y - 4}" r="4" fill="{colour[g]}"/>')
        out.append(f'<text x="{x1 + 26}" y="{y}">{escape(g)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def write_plots(raw: SpectralDataset, processed: SpectralDataset, features: FeatureMatrix | None,
                out_dir) -> list[Path]:
    """One SVG per spectrum pair plus one scatter; nothing for an empty dataset."""
    if len(raw) == 0:
        return []
    if raw.ids != processed.ids:
        raise ValueError("raw and processed datasets hold different samples")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s, p in zip(raw.spectra, processed.spectra):
        path = out / f"spectrum_{_safe(s.id)}.svg"
        path.write_text(spectrum_pair_svg(s.wavelengths, s.intensities, p.intensities, s.id))
        written.append(path)
    if features is not None and len(features):
        targets = dict(zip(raw.ids, raw.targets))
        labels = [targets.get(i, "") for i in features.ids]
        path = out / "feature_scatter.svg"
        path.write_text(scatter_svg(features, labels))
        written.append(path)
    return written
