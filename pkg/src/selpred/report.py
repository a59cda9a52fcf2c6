"""Summary tables and SVG risk-coverage plots.

The SVG is written by hand so that identical inputs give identical bytes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

from .errors import UsageError
from .ingest import fmt_metric, write_csv

SUMMARY_HEADER = ("method", "checkpoint_id", "pretrain_epoch", "coverage",
                  "sel_accuracy", "sel_macro_f1", "sel_qwk")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
METRICS = ("sel_accuracy", "sel_macro_f1")


@dataclass(frozen=True)
class PlotSpec:
    metric: str = "sel_macro_f1"
    width: int = 800
    height: int = 500
    title: str = "Risk-coverage"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise UsageError(f"plot metric must be one of {METRICS}")
        if self.width < 200 or self.height < 150:
            raise UsageError("plot canvas too small")


def summary_rows(ranking, method):
    for e in ranking.entries:
        op = e.operating_point
        yield [method, e.checkpoint_id, str(e.pretrain_epoch), fmt_metric(op.coverage, 4),
               fmt_metric(op.sel_accuracy, 4), fmt_metric(op.sel_macro_f1, 4),
               fmt_metric(op.sel_qwk, 4)]


def emit_summary_table(ranking, path, method="") -> Path:
    """Write ``summary.csv`` with one row per ranked checkpoint, in rank order."""
    if not ranking.entries and not ranking.excluded:
        raise UsageError("summary table needs at least one checkpoint result")
    rows = list(summary_rows(ranking, method))
    # excluded checkpoints still get a row, metrics empty, after the ranked ones
    for e, _reason in ranking.excluded:
        op = e.operating_point
        rows.append([method, e.checkpoint_id, str(e.pretrain_epoch),
                     fmt_metric(op.coverage, 4), fmt_metric(op.sel_accuracy, 4),
                     fmt_metric(op.sel_macro_f1, 4), fmt_metric(op.sel_qwk, 4)])
    write_csv(path, SUMMARY_HEADER, rows)
    return Path(path)


def _num(v):
    return f"{v:.2f}"


def render_risk_coverage_svg(series, spec: PlotSpec = PlotSpec()) -> str:
    """SVG text for ``series``: a list of ``(label, curve, operating_point)``.

    Coverage runs left to right from 0 to 1. Curve points whose metric is
    undefined are skipped.
    """
    if not series:
        raise UsageError("nothing to plot")
    w, h = spec.width, spec.height
    left, right, top, bottom = 70, 180, 40, 60
    pw, ph = w - left - right, h - top - bottom

    def sx(c):
        return left + c * pw

    def sy(v):
        return top + (1.0 - v) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{_num(left + pw / 2)}" y="22" text-anchor="middle" font-size="15">'
        f"{escape(spec.title)}</text>",
    ]
    for i in range(6):
        t = i / 5
        x, y = sx(t), sy(t)
        out.append(f'<line x1="{_num(x)}" y1="{_num(top)}" x2="{_num(x)}" y2="{_num(top + ph)}" '
                   'stroke="#e0e0e0"/>')
        out.append(f'<line x1="{_num(left)}" y1="{_num(y)}" x2="{_num(left + pw)}" y2="{_num(y)}" '
                   'stroke="#e0e0e0"/>')
        out.append(f'<text x="{_num(x)}" y="{_num(top + ph + 18)}" text-anchor="middle">{t:.1f}</text>')
        out.append(f'<text x="{_num(left - 8)}" y="{_num(y + 4)}" text-anchor="end">{t:.1f}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{_num(left + pw / 2)}" y="{h - 15}" text-anchor="middle">coverage</text>')
    out.append(f'<text x="18" y="{_num(top + ph / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 18 {_num(top + ph / 2)})">{spec.metric}</text>')

    for idx, (label, curve, op) in enumerate(series):
        if len(curve) < 2:
            raise UsageError(f"series {label!r} needs at least two curve points")
        color = PALETTE[idx % len(PALETTE)]
        pts = sorted(
            {(p.coverage, getattr(p, spec.metric)) for p in curve
             if getattr(p, spec.metric) is not None}
        )
        coords = " ".join(f"{_num(sx(c))},{_num(sy(v))}" for c, v in pts)
        out.append(f'<polyline class="series" data-label={quoteattr(str(label))} fill="none" '
                   f'stroke="{color}" stroke-width="2" points="{coords}"/>')
        value = getattr(op, spec.metric) if op is not None else None
        if value is not None:
            out.append(
                f'<circle class="operating-point" data-label={quoteattr(str(label))} '
                f'data-coverage="{op.coverage:.4f}" data-value="{value:.4f}" '
                f'cx="{_num(sx(op.coverage))}" cy="{_num(sy(value))}" r="6" '
                f'fill="{color}" stroke="black" stroke-width="1.5"/>'
            )
        ly = top + 10 + idx * 20
        lx = left + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" '
                   'stroke-width="2"/>')
        out.append(f'<text class="legend" x="{lx + 32}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_risk_coverage_plot(series, path, spec: PlotSpec = PlotSpec()) -> Path:
    Path(path).write_text(render_risk_coverage_svg(series, spec), encoding="utf-8", newline="\n")
    return Path(path)


def series_from_evals(evals):
    """Plot series for checkpoint evaluations, kept in the order given."""
    return [(e.checkpoint_id, e.curve, e.operating_point) for e in evals]
