"""Metrics CSV, run summary JSON and dependency-free SVG charts."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .harness import RunRecord

RECORD_FIELDS = [f.name for f in fields(RunRecord) if f.name != "wall_clock"]
_FIELD_TYPES = {f.name: f.type for f in fields(RunRecord)}
Z95 = 1.96


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name: str, text: str):
    typ = _FIELD_TYPES[name]
    if text == "":
        if "None" not in typ:
            raise ValueError(f"column {name} may not be empty")
        return None
    return int(text) if typ == "int" else float(text)


def write_metrics_csv(records: Sequence[RunRecord], path) -> Path:
    """One row per iteration; wall-clock time is left out so reruns are byte-identical."""
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for rec in records:
            w.writerow([_fmt(getattr(rec, name)) for name in RECORD_FIELDS])
    return path


def read_metrics_csv(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [RunRecord(**{k: _parse(k, v) for k, v in row.items()}) for row in rows]


def run_id(config_json: str) -> str:
    return hashlib.sha1(config_json.encode()).hexdigest()[:12]


def band(values) -> tuple[float, float]:
    """Mean and 95% half-width ``1.96 * stderr`` across seeds (0 for one seed)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), Z95 * float(v.std(ddof=1)) / math.sqrt(len(v))


def write_summary(summary: Mapping, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


# --- SVG -----------------------------------------------------------------

_W, _H = 640, 400
_M = dict(left=70, right=20, top=40, bottom=50)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart_svg(
    series: Mapping[str, tuple[Sequence[float], Sequence[float], Sequence[float]]],
    title: str,
    xlabel: str = "iteration",
    ylabel: str = "robustness score",
) -> str:
    """``series`` maps a label to ``(x, mean, half_width)``; bands are shaded."""
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    xs = [x for s in series.values() for x in s[0]]
    lows = [m - h for s in series.values() for m, h in zip(s[1], s[2])]
    highs = [m + h for s in series.values() for m, h in zip(s[1], s[2])]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(lows), max(highs)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pw = _W - _M["left"] - _M["right"]
    ph = _H - _M["top"] - _M["bottom"]

    def px(x):
        return _M["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return _M["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{_M["left"]}" y1="{_H - _M["bottom"]}" x2="{_W - _M["right"]}" y2="{_H - _M["bottom"]}" stroke="black"/>',
        f'<line x1="{_M["left"]}" y1="{_M["top"]}" x2="{_M["left"]}" y2="{_H - _M["bottom"]}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.1f}" y="{_H - _M["bottom"] + 18}" text-anchor="middle" font-size="11">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{_M["left"] - 6}" y="{py(t) + 4:.1f}" text-anchor="end" font-size="11">{t:.4g}</text>')
        out.append(f'<line x1="{_M["left"]}" y1="{py(t):.1f}" x2="{_W - _M["right"]}" y2="{py(t):.1f}" stroke="#ddd"/>')
    out.append(f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle" font-size="12">{xlabel}</text>')
    out.append(
        f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {_H / 2:.1f})">{ylabel}</text>'
    )
    for i, (label, (x, mean, half)) in enumerate(series.items()):
        color = palette[i % len(palette)]
        upper = [f"{px(a):.2f},{py(m + h):.2f}" for a, m, h in zip(x, mean, half)]
        lower = [f"{px(a):.2f},{py(m - h):.2f}" for a, m, h in zip(x, mean, half)]
        out.append(f'<polygon points="{" ".join(upper + lower[::-1])}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(a):.2f},{py(m):.2f}" for a, m in zip(x, mean))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _M["right"] - 4}" y="{_M["top"] + 14 * (i + 1)}" text-anchor="end" font-size="11" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_svg(grid, row_labels: Sequence[float], col_labels: Sequence[float], title: str) -> str:
    """Mass scale on rows, friction scale on columns; white (low) to blue (high)."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = float(g.min()), float(g.max())
    cell = 70
    left, top = 90, 50
    w = left + cell * g.shape[1] + 20
    h = top + cell * g.shape[0] + 50
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
    ]
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            frac = 0.5 if hi == lo else (g[i, j] - lo) / (hi - lo)
            r = int(round(255 - frac * (255 - 31)))
            gg = int(round(255 - frac * (255 - 119)))
            b = int(round(255 - frac * (255 - 180)))
            x, y = left + j * cell, top + i * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({r},{gg},{b})" stroke="white"/>')
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" font-size="11">{g[i, j]:.4g}</text>')
        out.append(f'<text x="{left - 8}" y="{top + i * cell + cell / 2 + 4}" text-anchor="end" font-size="11">{row_labels[i]:g}</text>')
    for j in range(g.shape[1]):
        out.append(f'<text x="{left + j * cell + cell / 2}" y="{top + g.shape[0] * cell + 16}" text-anchor="middle" font-size="11">{col_labels[j]:g}</text>')
    out.append(f'<text x="{left + g.shape[1] * cell / 2}" y="{h - 10}" text-anchor="middle" font-size="12">friction scale</text>')
    out.append(f'<text x="14" y="{top + g.shape[0] * cell / 2}" font-size="12" transform="rotate(-90 14 {top + g.shape[0] * cell / 2})" text-anchor="middle">mass scale</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def robustness_bands(records_by_seed: Mapping[int, Sequence[RunRecord]]):
    """Iterations with a robustness value in every seed, with mean and half-width."""
    per_seed = [{r.iteration: r.robustness for r in recs if r.robustness is not None} for recs in records_by_seed.values()]
    iters = sorted(set.intersection(*(set(d) for d in per_seed))) if per_seed else []
    means, halves = [], []
    for it in iters:
        m, h = band([d[it] for d in per_seed])
        means.append(m)
        halves.append(h)
    return iters, means, halves


def seed_dirs(run_dir) -> dict[int, Path]:
    out = {}
    for d in sorted(Path(run_dir).glob("seed_*")):
        if (d / "metrics.csv").exists():
            out[int(d.name.split("_", 1)[1])] = d
    return dict(sorted(out.items()))


def render_plots(run_dir) -> list[Path]:
    """(Re)write ``robustness.svg`` and ``heatmap.svg`` from files already in ``run_dir``."""
    run_dir = Path(run_dir)
    dirs = seed_dirs(run_dir)
    if not dirs:
        raise FileNotFoundError(f"no seed_*/metrics.csv under {run_dir}")
    records = {s: read_metrics_csv(d / "metrics.csv") for s, d in dirs.items()}
    written = []
    iters, means, halves = robustness_bands(records)
    if iters:
        label = f"mean ± 1.96 SE ({len(records)} seeds)"
        svg = line_chart_svg({label: (iters, means, halves)}, "Robustness evaluation")
        written.append(run_dir / "robustness.svg")
        written[-1].write_text(svg)
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        grids = [s["final_grid"] for s in summary.get("per_seed", []) if s.get("final_grid") is not None]
        if grids:
            mean_grid = np.mean(np.asarray(grids, dtype=np.float64), axis=0)
            svg = heatmap_svg(mean_grid, summary["mass_grid"], summary["friction_grid"], "Final robustness (mean over seeds)")
            written.append(run_dir / "heatmap.svg")
            written[-1].write_text(svg)
    return written


def export(records_by_seed: Mapping[int, Sequence[RunRecord]], summary: Mapping, out_dir) -> list[Path]:
    """Write per-seed ``metrics.csv``, ``summary.json`` and the SVG charts."""
    out_dir = Path(out_dir)
    if not records_by_seed or any(len(r) == 0 for r in records_by_seed.values()):
        raise ValueError("export needs at least one record per seed")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [write_metrics_csv(recs, out_dir / f"seed_{seed}" / "metrics.csv") for seed, recs in records_by_seed.items()]
    paths.append(write_summary(summary, out_dir / "summary.json"))
    paths += render_plots(out_dir)
    return paths
