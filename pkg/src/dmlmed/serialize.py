"""Deterministic emission of curves and reports as CSV, JSON, and SVG.

Floats are rounded to 12 significant digits before writing. That is far
below any statistical resolution here but above last-ulp noise from BLAS
scheduling, so re-running a seeded command yields byte-identical files
regardless of thread count.
"""

from __future__ import annotations

import io
import json
from typing import Iterable, Mapping, Sequence

import numpy as np

from .effects import AverageEffect, EffectCurve
from .inference import AblationReport, OLSBenchmarkReport, ShapeTestReport
from .simulation import MonteCarloReport

FORMAT_VERSION = "1"


def round12(x: float) -> float:
    return float(f"{float(x):.12g}")


def _clean(obj):
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return round12(value) if np.isfinite(value) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def json_report(payload: Mapping) -> str:
    body = dict(payload)
    body.setdefault("format_version", FORMAT_VERSION)
    return json.dumps(_clean(body), indent=2, sort_keys=True) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(_fmt(v) for v in row) + "\n")
    return out.getvalue()


def curve_csv(curve: EffectCurve) -> str:
    rows = zip(curve.grid, curve.estimate, curve.lower, curve.upper)
    return csv_text(
        ["w", "estimate", "lower", "upper", "kind"],
        ([w, e, lo, hi, curve.kind] for w, e, lo, hi in rows),
    )


def curve_json_obj(curve: EffectCurve) -> dict:
    return {
        "kind": curve.kind,
        "level": curve.level,
        "grid": curve.grid,
        "estimate": curve.estimate,
        "lower": curve.lower,
        "upper": curve.upper,
    }


def average_effect_obj(avg: AverageEffect) -> dict:
    return {"value": avg.value, "std_error": avg.std_error, "weighting": avg.weighting}


def monte_carlo_csv(report: MonteCarloReport) -> str:
    rows = [[c.dgp, c.method, c.bias, c.rmse, c.coverage] for c in report.cells]
    return csv_text(["dgp", "method", "bias", "rmse", "coverage"], rows)


def monte_carlo_json_obj(report: MonteCarloReport) -> dict:
    # wall-clock stays out of the serialized report so seeded re-runs are
    # byte-identical; it is logged separately
    return {
        "reps": report.reps,
        "grid_size": report.grid_size,
        "grid_description": report.grid_description,
        "cells": [
            {
                "dgp": c.dgp,
                "method": c.method,
                "bias": c.bias,
                "rmse": c.rmse,
                "coverage": c.coverage,
                "n_failures": c.n_failures,
            }
            for c in report.cells
        ],
    }


def shape_report_csv(report: ShapeTestReport) -> str:
    rows = [
        ["quantile_contrasts", "cnie_low_q1", report.cnie_low.value, report.cnie_low.std_error, None],
        ["quantile_contrasts", "cnie_mid_q2_q3", report.cnie_mid.value, report.cnie_mid.std_error, None],
        ["quantile_contrasts", "cnie_high_q4", report.cnie_high.value, report.cnie_high.std_error, None],
        [
            "quantile_contrasts",
            "contrast_low_minus_mid",
            report.contrast_low_minus_mid.value,
            report.contrast_low_minus_mid.std_error,
            report.contrast_low_minus_mid.p_value,
        ],
        [
            "quantile_contrasts",
            "contrast_high_minus_mid",
            report.contrast_high_minus_mid.value,
            report.contrast_high_minus_mid.std_error,
            report.contrast_high_minus_mid.p_value,
        ],
        ["monotonicity", "statistic_vs_linear", report.monotonicity_statistic, None, report.monotonicity_p],
    ]
    return csv_text(["test", "parameter", "estimate", "std_error", "p_value"], rows)


def shape_report_json_obj(report: ShapeTestReport) -> dict:
    return {
        "bins": {
            "low": {"value": report.cnie_low.value, "std_error": report.cnie_low.std_error},
            "mid": {"value": report.cnie_mid.value, "std_error": report.cnie_mid.std_error},
            "high": {"value": report.cnie_high.value, "std_error": report.cnie_high.std_error},
        },
        "contrasts": {
            "low_minus_mid": {
                "value": report.contrast_low_minus_mid.value,
                "std_error": report.contrast_low_minus_mid.std_error,
                "p_value": report.contrast_low_minus_mid.p_value,
            },
            "high_minus_mid": {
                "value": report.contrast_high_minus_mid.value,
                "std_error": report.contrast_high_minus_mid.std_error,
                "p_value": report.contrast_high_minus_mid.p_value,
            },
        },
        "monotonicity": {
            "statistic": report.monotonicity_statistic,
            "p_value": report.monotonicity_p,
        },
        "bin_edges": list(report.bin_edges),
        "bin_counts": list(report.bin_counts),
    }


def ablation_csv(report: AblationReport) -> str:
    rows = []
    for cell in report.cells:
        if cell.error is not None:
            minimum = f"error: {cell.error}"
        elif cell.argmin is None:
            minimum = "none"
        else:
            minimum = _fmt(cell.argmin)
        rows.append([cell.learner_family, cell.k_folds, minimum, cell.curvature_p])
    return csv_text(["learner", "k_folds", "cnie_minimum", "curvature_p"], rows)


def ablation_json_obj(report: AblationReport) -> dict:
    return {
        "cells": [
            {
                "learner": c.learner_family,
                "k_folds": c.k_folds,
                "cnie_minimum": c.argmin,
                "curvature_p": c.curvature_p,
                "error": c.error,
            }
            for c in report.cells
        ]
    }


def ols_benchmark_json_obj(report: OLSBenchmarkReport) -> dict:
    return {
        "mediator_coefs": report.mediator_coefs,
        "outcome_coefs": report.outcome_coefs,
        "average_indirect": report.average_indirect,
        "average_indirect_se": report.average_indirect_se,
        "indirect_intercept": report.indirect_intercept,
        "indirect_slope": report.indirect_slope,
        "n_rows": report.n_rows,
    }


def curves_svg(curves: Sequence[EffectCurve], width: int = 640, height: int = 360) -> str:
    """Minimal standalone line rendering of curves with their bands.

    Presentation-only; axes carry min/max tick labels and each curve is
    labeled by kind.
    """
    pad = 48.0
    xs = np.concatenate([c.grid for c in curves])
    ys = np.concatenate([np.concatenate([c.lower, c.upper]) for c in curves])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    yspan = y1 - y0
    y0 -= 0.05 * yspan
    y1 += 0.05 * yspan

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    palette = {"alpha": "#1f77b4", "theta": "#2ca02c", "cnie": "#d62728", "cnde": "#9467bd"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for i, curve in enumerate(curves):
        color = palette.get(curve.kind, "#333333")
        band = " ".join(
            f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(curve.grid, curve.upper)
        ) + " " + " ".join(
            f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(curve.grid[::-1], curve.lower[::-1])
        )
        line = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(curve.grid, curve.estimate))
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - pad + 4:.2f}" y="{pad + 14 * i:.2f}" font-size="11" '
            f'fill="{color}">{curve.kind}</text>'
        )
    for value, x, y, anchor in (
        (x0, sx(x0), height - pad + 14, "middle"),
        (x1, sx(x1), height - pad + 14, "middle"),
        (y0, pad - 4, sy(y0), "end"),
        (y1, pad - 4, sy(y1), "end"),
    ):
        parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="10" text-anchor="{anchor}">'
            f"{value:.3g}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
