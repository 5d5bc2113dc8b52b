"""Dependency-free SVG learning curves.

Each run (one `run_id` in one CSV) becomes a sequence of (env_steps, return)
points; runs are averaged inside shared env-step bins and drawn as a mean
polyline with a mean±std band across runs — the usual seed-variability plot,
emitted as plain SVG text so tests can parse it."""

import math
import xml.sax.saxutils as xs
from collections import defaultdict

import numpy as np

from .metrics import read_metrics

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 36, 44


def load_runs(csv_paths):
    """[(label, steps array, returns array)] with one entry per run_id."""
    runs = []
    for path in csv_paths:
        grouped = defaultdict(list)
        for row in read_metrics(path):
            grouped[row["run_id"]].append((row["env_steps"], row["episode_return"]))
        for run_id in sorted(grouped):
            pts = sorted(grouped[run_id])
            steps = np.array([p[0] for p in pts], dtype=np.float64)
            rets = np.array([p[1] for p in pts], dtype=np.float64)
            runs.append((run_id, steps, rets))
    if not runs:
        raise ValueError("no rows found in the given CSVs")
    return runs


def binned_band(runs, bins=30):
    """Common-grid (centers, mean, std) across runs; empty bins are dropped."""
    hi = max(s.max() for _, s, _ in runs)
    lo = min(s.min() for _, s, _ in runs)
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    per_run = np.full((len(runs), bins), np.nan)
    for i, (_, steps, rets) in enumerate(runs):
        idx = np.clip(np.searchsorted(edges, steps, side="right") - 1, 0, bins - 1)
        for b in range(bins):
            mask = idx == b
            if mask.any():
                per_run[i, b] = rets[mask].mean()
    keep = ~np.all(np.isnan(per_run), axis=0)
    per_run = per_run[:, keep]
    mean = np.nanmean(per_run, axis=0)
    # population std across runs; a single run plots with a zero-width band
    std = np.nanstd(per_run, axis=0)
    return centers[keep], mean, std


def _scaler(lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return lambda v: out_lo + (v - lo) / span * (out_hi - out_lo)


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def _fmt(v):
    return f"{v:g}"


def plot_returns(csv_paths, out_path, bins=30, title="episode return vs env steps"):
    runs = load_runs(csv_paths)
    x, mean, std = binned_band(runs, bins=bins)
    y_lo = float(np.min(mean - std))
    y_hi = float(np.max(mean + std))
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    sx = _scaler(float(x.min()), float(x.max()), MARGIN_L, WIDTH - MARGIN_R)
    sy = _scaler(y_lo, y_hi, HEIGHT - MARGIN_B, MARGIN_T)  # y grows upward

    band_pts = [f"{sx(v):.2f},{sy(m + s):.2f}" for v, m, s in zip(x, mean, std)]
    band_pts += [f"{sx(v):.2f},{sy(m - s):.2f}" for v, m, s in zip(x[::-1], mean[::-1], std[::-1])]
    mean_pts = " ".join(f"{sx(v):.2f},{sy(m):.2f}" for v, m in zip(x, mean))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">'
        f'{xs.escape(title)} ({len(runs)} runs)</text>',
        f'<polygon points="{" ".join(band_pts)}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>',
        f'<polyline points="{mean_pts}" fill="none" stroke="#08519c" stroke-width="1.5"/>',
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
    ]
    for t in _ticks(float(x.min()), float(x.max())):
        px = sx(t)
        parts.append(f'<line x1="{px:.2f}" y1="{HEIGHT - MARGIN_B}" x2="{px:.2f}" '
                     f'y2="{HEIGHT - MARGIN_B + 5}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{HEIGHT - MARGIN_B + 18}" '
                     f'text-anchor="middle" font-size="11">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        py = sy(t)
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.2f}" x2="{MARGIN_L}" '
                     f'y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py + 4:.2f}" '
                     f'text-anchor="end" font-size="11">{_fmt(t)}</text>')
    parts.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 8}" text-anchor="middle" '
                 f'font-size="12">env steps</text>')
    parts.append(f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 16 {HEIGHT // 2})">episode return</text>')
    parts.append("</svg>")

    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
    return out_path
