"""Overlap and distance metrics between a recognized bundle and a reference."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .tracts import arc_length, centerline, voxelize
from .volume import BinaryMask, Grid, squared_distance_transform


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. empty masks)."""


@dataclass(frozen=True)
class MetricsReport:
    dice: float
    precision: float
    assd: float
    ascd: float
    ald: float


def _pair(a: BinaryMask, b: BinaryMask):
    a.grid.require_same(b.grid)
    return a.data, b.data


def dice(a: BinaryMask, b: BinaryMask) -> float:
    x, y = _pair(a, b)
    denom = int(x.sum()) + int(y.sum())
    if denom == 0:
        raise MetricError("dice is undefined for two empty masks")
    return 200.0 * int((x & y).sum()) / denom


def precision(pred: BinaryMask, ref: BinaryMask) -> float:
    x, y = _pair(pred, ref)
    n = int(x.sum())
    if n == 0:
        raise MetricError("precision is undefined for an empty prediction")
    return 100.0 * int((x & y).sum()) / n


def surface(mask: np.ndarray) -> np.ndarray:
    """True voxels with a false 6-neighbour or lying on the grid border."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = m.copy()
    for ax in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=ax)[1:-1, 1:-1, 1:-1]
    return m & ~interior


def assd(a: BinaryMask, b: BinaryMask) -> float:
    """Average symmetric surface distance (mm), weighted by surface sizes."""
    x, y = _pair(a, b)
    if not x.any() or not y.any():
        raise MetricError("ASSD is undefined for an empty mask")
    sx, sy = surface(x), surface(y)
    sp = a.grid.spacing
    dx = np.sqrt(squared_distance_transform(sy, sp)[sx])
    dy = np.sqrt(squared_distance_transform(sx, sp)[sy])
    return math.fsum(np.concatenate([dx, dy]).tolist()) / (dx.size + dy.size)


def point_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the closest point of a polyline."""
    p = np.asarray(points, dtype=np.float64)[:, None, :]
    a = np.asarray(poly, dtype=np.float64)[:-1][None]
    b = np.asarray(poly, dtype=np.float64)[1:][None]
    ab = b - a
    den = (ab * ab).sum(-1)
    t = np.where(den > 0, ((p - a) * ab).sum(-1) / np.where(den > 0, den, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1).min(axis=1)


def centerline_distance(c1: np.ndarray, c2: np.ndarray) -> float:
    d12 = point_to_polyline(c1, c2)
    d21 = point_to_polyline(c2, c1)
    return math.fsum(np.concatenate([d12, d21]).tolist()) / (d12.size + d21.size)


def _centerlines(pred, ref, n):
    pred, ref = list(pred), list(ref)
    if not pred or not ref:
        raise MetricError("centerline metrics are undefined for an empty bundle")
    return centerline(pred, n), centerline(ref, n)


def ascd(pred, ref, n: int = 50) -> float:
    """Average symmetric centerline distance (mm) between two bundles."""
    cp, cr = _centerlines(pred, ref, n)
    return centerline_distance(cp, cr)


def ald(pred, ref, n: int = 50) -> float:
    """Absolute difference of centerline arc lengths (mm)."""
    cp, cr = _centerlines(pred, ref, n)
    return abs(arc_length(cp) - arc_length(cr))


def evaluate(pred, ref, grid: Grid, n: int = 50) -> MetricsReport:
    """Full report for two bundles voxelized on ``grid``."""
    mp, mr = voxelize(pred, grid), voxelize(ref, grid)
    return MetricsReport(dice(mp, mr), precision(mp, mr), assd(mp, mr), ascd(pred, ref, n), ald(pred, ref, n))


METRIC_COLUMNS = [f.name for f in fields(MetricsReport)]


def format_table(rows: list[tuple[str, str, MetricsReport]]) -> str:
    """One row per (case, bundle) plus a ``mean (std)`` summary row."""
    header = ["case", "bundle"] + METRIC_COLUMNS
    lines = ["\t".join(header)]
    for case, bundle, r in rows:
        vals = [getattr(r, c) for c in METRIC_COLUMNS]
        lines.append("\t".join([case, bundle] + [_fmt(c, v) for c, v in zip(METRIC_COLUMNS, vals)]))
    if rows:
        summary = ["mean (std)", "all"]
        for c in METRIC_COLUMNS:
            v = np.array([getattr(r, c) for _, _, r in rows])
            summary.append(f"{_fmt(c, v.mean())} ({_fmt(c, v.std())})")
        lines.append("\t".join(summary))
    return "\n".join(lines) + "\n"


def _fmt(col: str, v: float) -> str:
    return f"{v:.2f}" if col in ("dice", "precision") else f"{v:.3f}"
