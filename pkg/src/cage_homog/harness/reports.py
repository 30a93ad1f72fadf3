"""Tables, rate fits and report files (CSV, JSON, SVG)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> dict:
    """Least-squares slope of ``log y`` against ``log x``.

    Returns ``slope``, ``intercept``, ``residual`` (RMS of the log residuals)
    and ``n``.  Needs at least three positive points; otherwise the slope is
    ``None`` and ``reason`` says why.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        return {"slope": None, "intercept": None, "residual": None, "n": int(x.size),
                "reason": "fewer than 3 points"}
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        return {"slope": None, "intercept": None, "residual": None, "n": int(x.size),
                "reason": "non-positive value"}
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    res = ly - (intercept + slope * lx)
    return {"slope": float(slope), "intercept": float(intercept),
            "residual": float(np.sqrt(np.mean(res**2))), "n": int(x.size)}


def is_monotone(values: Sequence[float], decreasing: bool = True, strict: bool = True) -> bool:
    v = list(values)
    pairs = list(zip(v, v[1:]))
    if decreasing:
        return all(a > b if strict else a >= b for a, b in pairs)
    return all(a < b if strict else a <= b for a, b in pairs)


@dataclass
class ConvergenceTable:
    """Rows ``{param, norm, value}`` plus a log-log fit per norm."""

    param_name: str = "delta"
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def add(self, param: float, norm: str, value: float) -> None:
        self.rows.append({"param": float(param), "norm": norm, "value": float(value)})

    def norms(self) -> list:
        seen = []
        for r in self.rows:
            if r["norm"] not in seen:
                seen.append(r["norm"])
        return seen

    def series(self, norm: str) -> tuple:
        pts = [(r["param"], r["value"]) for r in self.rows if r["norm"] == norm]
        if not pts:
            return np.array([]), np.array([])
        p, v = zip(*pts)
        return np.array(p), np.array(v)

    def fit(self, norms: Optional[Sequence[str]] = None) -> dict:
        for n in norms or self.norms():
            p, v = self.series(n)
            f = fit_loglog(p, v)
            # a sequence that is not monotone in the parameter gets a low-confidence flag
            f["low_confidence"] = f["slope"] is None or not (is_monotone(v, False, False) or
                                                              is_monotone(v, True, False))
            self.fits[n] = f
        return self.fits

    def to_dict(self) -> dict:
        return {"param_name": self.param_name, "rows": self.rows, "fits": self.fits, "notes": self.notes}


def _clean(obj):
    """JSON-safe copy: complex -> [re, im], numpy scalars -> Python, NaN -> None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(float(obj.real)), _clean(float(obj.imag))]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(table: ConvergenceTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([table.param_name, "norm", "value"])
        for r in table.rows:
            w.writerow([repr(r["param"]), r["norm"], repr(r["value"])])


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def _log_ticks(lo: float, hi: float) -> list:
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    return [10.0**k for k in range(a, b + 1)]


def svg_loglog(series: dict, path, title: str = "", xlabel: str = "delta", ylabel: str = "value",
               width: int = 640, height: int = 420, logx: bool = True) -> None:
    """Minimal log-log (or semi-log with ``logx=False``) plot, one polyline per series."""
    pts = {k: [(x, y) for x, y in zip(*v) if (x > 0 or not logx) and y > 0] for k, v in series.items()}
    fx = math.log10 if logx else float
    pts = {k: v for k, v in pts.items() if v}
    ml, mr, mt, mb = 70, 170, 40, 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{title}</text>']
    if pts:
        xs = [p[0] for v in pts.values() for p in v]
        ys = [p[1] for v in pts.values() for p in v]
        x0, x1 = fx(min(xs)), fx(max(xs))
        y0, y1 = math.log10(min(ys)), math.log10(max(ys))
        if x1 - x0 < 1e-12:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 - y0 < 1e-12:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pw, ph = width - ml - mr, height - mt - mb

        def sx(x):
            return ml + (fx(x) - x0) / (x1 - x0) * pw

        def sy(y):
            return mt + ph - (math.log10(y) - y0) / (y1 - y0) * ph

        out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
        xt = _log_ticks(10**x0, 10**x1) if logx else list(np.linspace(x0, x1, 5))
        for t in xt:
            if not logx or 10**x0 * (1 - 1e-9) <= t <= 10**x1 * (1 + 1e-9):
                out.append(f'<line x1="{sx(t):.1f}" y1="{mt + ph}" x2="{sx(t):.1f}" y2="{mt + ph + 5}" stroke="black"/>')
                out.append(f'<text x="{sx(t):.1f}" y="{mt + ph + 18}" text-anchor="middle">{t:g}</text>')
        for t in _log_ticks(10**y0, 10**y1):
            if 10**y0 * (1 - 1e-9) <= t <= 10**y1 * (1 + 1e-9):
                out.append(f'<line x1="{ml - 5}" y1="{sy(t):.1f}" x2="{ml}" y2="{sy(t):.1f}" stroke="black"/>')
                out.append(f'<text x="{ml - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
        for i, (name, v) in enumerate(pts.items()):
            c = _COLORS[i % len(_COLORS)]
            poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in v)
            out.append(f'<polyline points="{poly}" fill="none" stroke="{c}" stroke-width="1.5"/>')
            out += [f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{c}"/>' for x, y in v]
            ly = mt + 14 + 16 * i
            out.append(f'<line x1="{width - mr + 10}" y1="{ly - 4}" x2="{width - mr + 30}" y2="{ly - 4}" stroke="{c}" stroke-width="2"/>')
            out.append(f'<text x="{width - mr + 35}" y="{ly}">{name}</text>')
        out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
        out.append(f'<text x="15" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 15 {mt + ph / 2:.1f})">{ylabel}</text>')
    else:
        out.append(f'<text x="{width / 2:.1f}" y="{height / 2:.1f}" text-anchor="middle">no positive data</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def write_table_outputs(table: ConvergenceTable, outdir, summary: dict, plot_name: str, title: str,
                        xlabel: str = "delta") -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(table, outdir / "results.csv")
    write_json(summary, outdir / "summary.json")
    series = {n: table.series(n) for n in table.norms()}
    svg_loglog(series, outdir / f"plot_{plot_name}.svg", title, xlabel)
    return {"csv": outdir / "results.csv", "json": outdir / "summary.json", "svg": outdir / f"plot_{plot_name}.svg"}
