"""Fiber recognition: sequential THEN evaluation and bundle aggregation.

A fiber satisfies a K-stage query when its point sequence can be cut into K
consecutive windows, each at least ``min_points_per_stage`` long, such that
every stage scores at least its threshold on its window. A stage's score on a
window is the mean of the strictly positive per-point degrees (0 when there
are none). Among valid cuts the one maximising the smallest margin
``score - threshold`` wins; ties go to the earliest window boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .binding import BoundQuery, evaluate_expr
from .query import Stage, iter_atoms
from .tracts import Tractogram, voxelize
from .volume import BinaryMask

_CHUNK_POINTS = 1 << 21


@dataclass(frozen=True)
class EngineConfig:
    default_threshold: float = 0.5
    min_points_per_stage: int = 2
    orientation_mode: str = "both"

    def __post_init__(self):
        if not 0.0 < self.default_threshold <= 1.0:
            raise ValueError("default_threshold must lie in (0, 1]")
        if self.min_points_per_stage < 1:
            raise ValueError("min_points_per_stage must be >= 1")
        if self.orientation_mode not in ("both", "forward"):
            raise ValueError(f"unknown orientation_mode {self.orientation_mode!r}")


@dataclass(frozen=True)
class FiberVerdict:
    accepted: bool
    stage_scores: tuple[float, ...]
    # (start, stop) point ranges, indexed along the orientation used
    segmentation: tuple[tuple[int, int], ...]
    orientation_used: str
    margin: float
    reason: str = ""


@dataclass(frozen=True, eq=False)
class BundleReport:
    name: str
    accepted_indices: tuple[int, ...]
    verdicts: tuple[FiberVerdict, ...]
    bundle: Tractogram
    labelmap: BinaryMask

    @property
    def n_input(self) -> int:
        return len(self.verdicts)

    @property
    def n_accepted(self) -> int:
        return len(self.accepted_indices)

    @property
    def n_rejected(self) -> int:
        return self.n_input - self.n_accepted


def _sample_degrees(points: np.ndarray, bq: BoundQuery, atoms) -> dict:
    coords = np.ascontiguousarray(bq.grid.world_to_voxel(points))
    return {a: _kernels.sample_trilinear_coords(bq.landscapes[a].data, coords) for a in atoms}


def stage_values(points, stage: Stage, bq: BoundQuery) -> np.ndarray:
    """Per-point degree of one stage expression along ``points``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    atoms = list(dict.fromkeys(iter_atoms(stage.expr)))
    return evaluate_expr(stage.expr, _sample_degrees(pts, bq, atoms))


def mean_positive(values) -> float:
    """Mean of the strictly positive values (sequential sum), 0 if there are none."""
    acc = 0.0
    cnt = 0
    for v in np.asarray(values, dtype=np.float64).tolist():
        if v > 0.0:
            acc += v
            cnt += 1
    return acc / cnt if cnt else 0.0


def stage_score(points, stage: Stage, bq: BoundQuery) -> float:
    return mean_positive(stage_values(points, stage, bq))


def _stage_matrix(points: np.ndarray, bq: BoundQuery) -> np.ndarray:
    atoms = bq.query.atoms()
    degrees = _sample_degrees(points, bq, atoms)
    values = np.empty((len(bq.stages), len(points)))
    for k, st in enumerate(bq.stages):
        values[k] = evaluate_expr(st.expr, degrees)
    return values


def _verdict(opt, bounds, scores, orientation, K, reason=""):
    if opt == -np.inf:
        return FiberVerdict(False, (0.0,) * K, (), orientation, float("-inf"), reason or "too short")
    seg = tuple((int(bounds[k]), int(bounds[k + 1])) for k in range(K))
    accepted = bool(opt >= 0.0)
    return FiberVerdict(accepted, tuple(float(s) for s in scores), seg, orientation, float(opt),
                        "" if accepted else "below threshold")


def evaluate_fibers(streamlines, bq: BoundQuery, cfg: EngineConfig = EngineConfig()) -> list[FiberVerdict]:
    """Evaluate many fibers; independent per fiber, order preserved."""
    streamlines = list(streamlines)
    K = len(bq.stages)
    tau = np.array(bq.thresholds, dtype=np.float64)
    m = cfg.min_points_per_stage
    verdicts: list[FiberVerdict] = []
    start = 0
    while start < len(streamlines):
        stop = start
        npts = 0
        while stop < len(streamlines) and (stop == start or npts + len(streamlines[stop]) <= _CHUNK_POINTS):
            npts += len(streamlines[stop])
            stop += 1
        chunk = [np.asarray(s, dtype=np.float64) for s in streamlines[start:stop]]
        verdicts.extend(_evaluate_chunk(chunk, bq, tau, m, cfg.orientation_mode, K))
        start = stop
    return verdicts


def _evaluate_chunk(chunk, bq, tau, m, mode, K):
    lengths = np.array([len(s) for s in chunk], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    if offsets[-1] == 0:
        return [_verdict(-np.inf, None, None, "forward", K) for _ in chunk]
    values = np.ascontiguousarray(_stage_matrix(np.concatenate(chunk), bq))
    opt_f, b_f, s_f = _kernels.partition_batch(values, offsets, tau, m)
    if mode == "both":
        fid = np.repeat(np.arange(len(chunk)), lengths)
        rev = offsets[fid] + offsets[fid + 1] - 1 - np.arange(offsets[-1])
        opt_r, b_r, s_r = _kernels.partition_batch(np.ascontiguousarray(values[:, rev]), offsets, tau, m)
    out = []
    for f in range(len(chunk)):
        if mode == "both" and opt_r[f] > opt_f[f]:
            out.append(_verdict(opt_r[f], b_r[f], s_r[f], "reversed", K))
        else:
            out.append(_verdict(opt_f[f], b_f[f], s_f[f], "forward", K))
    return out


def evaluate_fiber(fiber, bq: BoundQuery, cfg: EngineConfig = EngineConfig()) -> FiberVerdict:
    return evaluate_fibers([fiber], bq, cfg)[0]


def filter_tractogram(t: Tractogram, bq: BoundQuery, cfg: EngineConfig = EngineConfig()) -> BundleReport:
    verdicts = evaluate_fibers(t.streamlines, bq, cfg)
    accepted = tuple(i for i, v in enumerate(verdicts) if v.accepted)
    bundle = t.subset(accepted)
    return BundleReport(bq.name, accepted, tuple(verdicts), bundle, voxelize(bundle, bq.grid))


def write_verdicts(report: BundleReport, path) -> None:
    """Tab-separated audit table: fiber index, accepted flag, per-stage scores."""
    K = len(report.verdicts[0].stage_scores) if report.verdicts else 0
    cols = ["fiber", "accepted", "orientation", "margin"] + [f"stage{k + 1}" for k in range(K)] + ["reason"]
    lines = ["\t".join(cols)]
    for i, v in enumerate(report.verdicts):
        row = [str(i), "1" if v.accepted else "0", v.orientation_used,
               "-inf" if v.margin == -np.inf else f"{v.margin:.6f}"]
        row += [f"{s:.6f}" for s in v.stage_scores] + [v.reason]
        lines.append("\t".join(row))
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
