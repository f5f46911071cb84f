"""Static SVG rendering of SROC plots in ROC space (x = FPR, y = sensitivity)."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .data import OutcomeSet, expit
from .errors import ConvergenceError
from .reml import BivariateFit, confidence_region
from .sroc import hsroc_params, sample_curve

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
CURVE_POINTS = 512


@dataclass
class PlotSeries:
    name: str
    fit: BivariateFit
    data: OutcomeSet
    color: str | None = None
    dashed: bool = False


def _pts(xy) -> str:
    return " ".join(f"{x:.6f},{y:.6f}" for x, y in xy)


def render_sroc_svg(series, *, title: str = "", level: float = 0.95, size: int = 480,
                    region_points: int = 100) -> str:
    """Standalone SVG 1.1 document with one SROC, study points and confidence region per series.

    Plotted elements live in a group whose user space is the unit square, so
    every data coordinate in the document is an (FPR, sensitivity) pair.
    """
    if isinstance(series, PlotSeries):
        series = [series]
    series = list(series)
    for s in series:
        if not s.fit.converged:
            raise ConvergenceError(f"cannot plot non-converged fit for {s.name!r}", fit=s.fit)

    margin_l, margin_t, margin_r, margin_b = 60, 40 if title else 20, 20, 50
    legend_h = 18 * len(series) + 10 if len(series) > 1 else 0
    width = margin_l + size + margin_r
    height = margin_t + size + margin_b + legend_h
    px = 1.0 / size   # one pixel in data units

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{margin_l + size / 2}" y="{margin_t - 15}" text-anchor="middle" '
                   f'font-size="14">{escape(title)}</text>')

    # axes and ticks in pixel space
    x0, y0 = margin_l, margin_t + size
    out.append(f'<rect x="{margin_l}" y="{margin_t}" width="{size}" height="{size}" fill="none" stroke="black"/>')
    for k in range(6):
        t = k / 5
        xp = margin_l + t * size
        yp = margin_t + (1 - t) * size
        out.append(f'<line x1="{xp}" y1="{y0}" x2="{xp}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{xp}" y="{y0 + 18}" text-anchor="middle">{t:.1f}</text>')
        out.append(f'<line x1="{x0 - 5}" y1="{yp}" x2="{x0}" y2="{yp}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{yp + 4}" text-anchor="end">{t:.1f}</text>')
    out.append(f'<text x="{margin_l + size / 2}" y="{y0 + 38}" text-anchor="middle">False positive rate</text>')
    out.append(f'<text x="15" y="{margin_t + size / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {margin_t + size / 2})">Sensitivity</text>')

    out.append(f'<g class="data" transform="translate({margin_l},{margin_t + size}) scale({size},{-size})">')
    out.append(f'<line x1="0" y1="0" x2="1" y2="1" stroke="#bbbbbb" stroke-width="{px:.6f}" '
               f'stroke-dasharray="{4 * px:.6f},{4 * px:.6f}"/>')
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        dash = f' stroke-dasharray="{6 * px:.6f},{4 * px:.6f}"' if s.dashed else ""
        name = escape(s.name, {'"': "&quot;"})
        # studies, sized by total sample size when counts are known
        fpr = expit(s.data.y_b)
        sens = expit(s.data.y_a)
        if s.data.source is not None:
            n_tot = s.data.source.counts().sum(axis=1).astype(float)
            radii = 2.0 + 6.0 * np.sqrt(n_tot / n_tot.max())
        else:
            radii = np.full(len(s.data), 4.0)
        out.append(f'<g class="studies" data-series="{name}" fill="none" stroke="{color}" '
                   f'stroke-width="{px:.6f}">')
        for x, y, r, lab in zip(fpr, sens, radii, s.data.labels):
            out.append(f'<circle cx="{x:.6f}" cy="{y:.6f}" r="{r * px:.6f}"><title>{escape(str(lab))}</title></circle>')
        out.append('</g>')
        curve = sample_curve(hsroc_params(s.fit), CURVE_POINTS)
        out.append(f'<polyline class="sroc" data-series="{name}" fill="none" stroke="{color}" '
                   f'stroke-width="{2 * px:.6f}"{dash} points="{_pts(curve)}"/>')
        region = confidence_region(s.fit, level, region_points)
        out.append(f'<polyline class="region" data-series="{name}" fill="none" stroke="{color}" '
                   f'stroke-width="{1.5 * px:.6f}" stroke-dasharray="{3 * px:.6f},{2 * px:.6f}" '
                   f'points="{_pts(region)}"/>')
        sx, sy = float(expit(s.fit.params.mu_b)), float(expit(s.fit.params.mu_a))
        out.append(f'<circle class="summary" data-series="{name}" cx="{sx:.6f}" cy="{sy:.6f}" '
                   f'r="{5 * px:.6f}" fill="{color}" stroke="black" stroke-width="{px:.6f}"/>')
    out.append('</g>')

    if len(series) > 1:
        ly = margin_t + size + margin_b
        out.append('<g class="legend">')
        for i, s in enumerate(series):
            color = s.color or PALETTE[i % len(PALETTE)]
            yy = ly + 18 * i
            out.append(f'<line x1="{margin_l}" y1="{yy}" x2="{margin_l + 24}" y2="{yy}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{margin_l + 30}" y="{yy + 4}">{escape(s.name)}</text>')
        out.append('</g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"
