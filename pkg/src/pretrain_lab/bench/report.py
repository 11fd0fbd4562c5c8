"""Rate fitting, acceptance checks and CSV / JSON / SVG output."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from pretrain_lab.counterexample import FAILURE_CONSTANT, TV_THRESHOLD
from pretrain_lab.prob import fit_loglog_slope

from .sweep import SweepResult

INT_COLUMNS = ("m", "n", "d", "r_or_k", "trial", "seed")
FLOAT_COLUMNS = ("excess_risk", "excess_risk_se", "aux_tv", "aux_align_residual")


@dataclass
class RateReport:
    axis: str
    slope: float
    slope_std_error: float
    points: list
    target_range: tuple | None = None
    passed: bool = False
    message: str = ""


@dataclass
class CheckResult:
    name: str
    kind: str
    passed: bool
    details: dict = field(default_factory=dict)


def _aggregate(values, how):
    values = np.asarray(values, dtype=float)
    if how == "median":
        return float(np.median(values))
    if how == "mean":
        return float(np.mean(values))
    raise ValueError(f"unknown aggregate {how!r}")


def fit_rate(results, axis: str, aggregate: str = "median", target_range=None,
             method: str | None = None) -> RateReport:
    """Log-log slope of the per-cell aggregate excess risk along ``axis``.

    Only cells with the other axis at its largest value are used. Rows
    flagged as failed are skipped; with ``method=None`` the pipeline rows
    (or the counterexample rows) are used.
    """
    if axis not in ("m", "n"):
        raise ValueError("axis must be 'm' or 'n'")
    other = "n" if axis == "m" else "m"
    rows = [r for r in results if not r.failed]
    if method is None:
        methods = {r.method for r in rows}
        method = "pipeline" if "pipeline" in methods else (sorted(methods)[0] if methods else "pipeline")
    rows = [r for r in rows if r.method == method]
    target = tuple(target_range) if target_range is not None else None
    if not rows:
        return RateReport(axis, math.nan, math.nan, [], target, False, "no usable rows")
    top = max(getattr(r, other) for r in rows)
    cells: dict[int, list] = {}
    for r in rows:
        if getattr(r, other) == top:
            cells.setdefault(getattr(r, axis), []).append(r.excess_risk)
    points = [(k, _aggregate(v, aggregate)) for k, v in sorted(cells.items())]
    if len(points) < 3:
        return RateReport(axis, math.nan, math.nan, points, target, False,
                          f"need >= 3 distinct {axis} values, got {len(points)}")
    if any(not (p[1] > 0) for p in points):
        return RateReport(axis, math.nan, math.nan, points, target, False,
                          f"non-positive {aggregate} excess risk in some cell; slope undefined")
    slope, se = fit_loglog_slope(points)
    passed = target is None or target[0] <= slope <= target[1]
    return RateReport(axis, slope, se, points, target, bool(passed), "")


def _paired(results):
    pairs = {}
    for r in results:
        if r.method in ("pipeline", "baseline"):
            pairs.setdefault((r.m, r.n, r.trial), {})[r.method] = r
    return [(p["pipeline"], p["baseline"]) for p in pairs.values()
            if "pipeline" in p and "baseline" in p]


def evaluate_check(check: dict, results) -> tuple[CheckResult, RateReport | None]:
    kind = check["kind"]
    name = check.get("name", kind if kind != "slope" else f"slope_{check['axis']}")
    if kind == "slope":
        rep = fit_rate(results, check["axis"], check.get("aggregate", "median"), check["target_range"],
                       check.get("method"))
        return CheckResult(name, kind, rep.passed, {"slope": rep.slope, "slope_std_error": rep.slope_std_error,
                                                    "target_range": list(rep.target_range),
                                                    "message": rep.message}), rep
    if kind == "benefit":
        win_min = float(check.get("min_win_fraction", 0.8))
        ratio_max = float(check.get("max_median_ratio", 0.5))
        pairs = [(p, b) for p, b in _paired(results) if not (p.failed or b.failed)]
        if not pairs:
            return CheckResult(name, kind, False, {"message": "no paired trials"}), None
        wins = float(np.mean([p.excess_risk < b.excess_risk for p, b in pairs]))
        ratios = [p.excess_risk / b.excess_risk if b.excess_risk > 0 else math.inf for p, b in pairs]
        med = float(np.median(ratios))
        ok = wins >= win_min and med <= ratio_max
        return CheckResult(name, kind, ok, {"win_fraction": wins, "median_ratio": med, "pairs": len(pairs),
                                            "min_win_fraction": win_min, "max_median_ratio": ratio_max}), None
    if kind == "aux_max":
        column = check.get("column", "aux_tv")
        stat = check.get("statistic", "max")
        vals = [getattr(r, column) for r in results
                if r.method in ("pipeline", "two_phase_mle") and not r.failed and getattr(r, column) is not None
                and ("m" not in check or r.m == check["m"])]
        if not vals:
            return CheckResult(name, kind, False, {"message": f"no {column} values"}), None
        value = float(np.max(vals)) if stat == "max" else _aggregate(vals, stat)
        thr = float(check["threshold"])
        return CheckResult(name, kind, value <= thr, {"column": column, "statistic": stat, "value": value,
                                                      "threshold": thr, "count": len(vals)}), None
    if kind == "failure_frequency":
        tv_thr = float(check.get("tv_threshold", TV_THRESHOLD))
        target = float(check.get("target", FAILURE_CONSTANT))
        slack = float(check.get("slack_se", 3.0))
        vals = [r.excess_risk for r in results if not r.failed]
        if not vals:
            return CheckResult(name, kind, False, {"message": "no rows"}), None
        hits = np.asarray(vals) >= tv_thr - 1e-15
        freq = float(hits.mean())
        se = math.sqrt(freq * (1.0 - freq) / len(vals))
        return CheckResult(name, kind, freq >= target - slack * se,
                           {"frequency": freq, "std_error": se, "target": target, "trials": len(vals),
                            "tv_threshold": tv_thr}), None
    raise ValueError(f"unknown check kind {kind!r}")


def evaluate_checks(config, results):
    checks, rates = [], []
    for chk in config.checks:
        res, rep = evaluate_check(chk, results)
        checks.append(res)
        if rep is not None:
            rates.append(rep)
    return checks, rates


# -- serialization --------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(results, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SweepResult.columns())
            for r in results:
                w.writerow([_fmt(getattr(r, c)) for c in SweepResult.columns()])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_results(path) -> list[SweepResult]:
    """Parse a results.csv written by :func:`emit_report` back into rows."""
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            vals = {}
            for c in SweepResult.columns():
                raw = rec[c]
                if c in INT_COLUMNS:
                    vals[c] = int(raw) if raw != "" else None
                elif c in FLOAT_COLUMNS:
                    vals[c] = float(raw) if raw != "" else None
                elif c == "failed":
                    vals[c] = raw == "true"
                else:
                    vals[c] = raw
            rows.append(SweepResult(**vals))
    return rows


def _svg_plot(report: RateReport, title: str) -> str:
    w, h, pad = 480, 360, 50
    pts = [(math.log10(x), math.log10(y)) for x, y in report.points if x > 0 and y > 0]
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n'
    body = [f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<text x="{w / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="13">{title}</text>']
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def sx(v):
            return pad + (v - x0) / (x1 - x0) * (w - 2 * pad)

        def sy(v):
            return h - pad - (v - y0) / (y1 - y0) * (h - 2 * pad)

        body.append(f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>')
        body.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>')
        body.append(f'<text x="{w / 2}" y="{h - 12}" text-anchor="middle" font-family="sans-serif" '
                    f'font-size="12">log10 {report.axis}</text>')
        body.append(f'<text x="14" y="{h / 2}" font-family="sans-serif" font-size="12" '
                    f'transform="rotate(-90 14 {h / 2})" text-anchor="middle">log10 excess risk</text>')
        for x, y in pts:
            body.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="steelblue"/>')
        if math.isfinite(report.slope):
            a = float(np.mean(ys) - report.slope * np.mean(xs))
            body.append(f'<line x1="{sx(x0):.2f}" y1="{sy(a + report.slope * x0):.2f}" x2="{sx(x1):.2f}" '
                        f'y2="{sy(a + report.slope * x1):.2f}" stroke="firebrick" stroke-dasharray="5,3"/>')
            body.append(f'<text x="{w - pad}" y="{pad}" text-anchor="end" font-family="sans-serif" '
                        f'font-size="12">slope {report.slope:.3f} ± {report.slope_std_error:.3f}</text>')
    return head + "\n".join(body) + "\n</svg>\n"


def emit_report(results, rate_reports, out_dir, config=None, checks=None) -> dict:
    """Write results.csv, summary.json and one plot_<axis>.svg per rate report.

    Returns the summary dictionary.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    write_results_csv(results, out / "results.csv")
    cells = {(r.m, r.n) for r in results}
    checks = checks or []
    summary = {
        "config": config.to_dict() if config is not None else None,
        "master_seed": config.master_seed if config is not None else None,
        "config_hash": config.config_hash() if config is not None else None,
        "cells": len(cells),
        "rows": len(results),
        "failed_rows": sum(r.failed for r in results),
        "rate_reports": [{**asdict(r), "target_range": list(r.target_range) if r.target_range else None}
                         for r in rate_reports],
        "checks": [asdict(c) for c in checks],
        "all_passed": all(c.passed for c in checks),
    }
    for i, rep in enumerate(rate_reports):
        suffix = rep.axis if sum(r.axis == rep.axis for r in rate_reports) == 1 else f"{rep.axis}_{i}"
        title = f"{config.experiment_id if config else 'sweep'}: {rep.axis}-axis"
        (out / f"plot_{suffix}.svg").write_text(_svg_plot(rep, title))
    with (out / "summary.json").open("w") as fh:
        json.dump(clean_json(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def clean_json(obj):
    """Make ``obj`` strict-JSON: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
