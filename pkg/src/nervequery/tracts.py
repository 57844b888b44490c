"""Streamlines: TCK I/O, arc-length resampling, voxelization and centerlines."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume import BinaryMask, Grid


class TckError(Exception):
    """Base class for TCK read failures."""


class TckMagicError(TckError):
    pass


class TckDatatypeError(TckError):
    pass


class TckTruncatedError(TckError):
    pass


class TckFormatError(TckError):
    pass


_TCK_DTYPES = {
    "float32le": np.dtype("<f4"),
    "float32be": np.dtype(">f4"),
    "float64le": np.dtype("<f8"),
    "float64be": np.dtype(">f8"),
}


@dataclass(frozen=True, eq=False)
class Tractogram:
    streamlines: list[np.ndarray]
    header: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        sl = []
        for s in self.streamlines:
            a = np.asarray(s)
            if a.dtype != np.float32 and a.dtype != np.float64:
                a = a.astype(np.float64)
            if a.ndim != 2 or a.shape[1] != 3:
                raise ValueError(f"streamline must be (N, 3), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError("streamline coordinates must be finite")
            a = np.ascontiguousarray(a)
            a.setflags(write=False)
            sl.append(a)
        object.__setattr__(self, "streamlines", sl)
        object.__setattr__(self, "header", dict(self.header))

    def __len__(self):
        return len(self.streamlines)

    def __iter__(self):
        return iter(self.streamlines)

    def subset(self, indices) -> "Tractogram":
        return Tractogram([self.streamlines[i] for i in indices], self.header)


def read_tck(path) -> Tractogram:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"mrtrix tracks\n"):
        raise TckMagicError(f"{path}: missing 'mrtrix tracks' magic line")
    end = re.search(rb"\nEND\n", raw)
    if end is None:
        raise TckTruncatedError(f"{path}: header has no END line")
    header: dict[str, str] = {}
    for line in raw[14 : end.start() + 1].decode("latin-1").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise TckFormatError(f"{path}: malformed header line {line!r}")
        key, value = key.strip(), value.strip()
        header[key] = f"{header[key]}\n{value}" if key in header else value
    dtype = _TCK_DTYPES.get(header.get("datatype", "").lower())
    if dtype is None:
        raise TckDatatypeError(f"{path}: unsupported datatype {header.get('datatype')!r}")
    m = re.fullmatch(r"\.\s+(\d+)", header.get("file", ""))
    if m is None:
        raise TckFormatError(f"{path}: 'file' key must be '. <offset>'")
    offset = int(m.group(1))
    if offset < end.end():
        raise TckFormatError(f"{path}: data offset {offset} inside header")
    body = raw[offset:]
    triple = 3 * dtype.itemsize
    if len(body) % triple:
        raise TckTruncatedError(f"{path}: body length {len(body)} is not a whole number of points")
    pts = np.frombuffer(body, dtype=dtype).reshape(-1, 3)
    inf_rows = np.nonzero(np.isinf(pts).all(axis=1))[0]
    if inf_rows.size == 0:
        raise TckTruncatedError(f"{path}: missing end-of-data marker")
    pts = pts[: inf_rows[0]].astype(dtype.newbyteorder("="))
    nan_rows = np.nonzero(np.isnan(pts).any(axis=1))[0]
    if not np.all(np.isfinite(pts[np.setdiff1d(np.arange(len(pts)), nan_rows)])):
        raise TckFormatError(f"{path}: non-finite coordinate inside a streamline")
    streamlines = []
    start = 0
    for r in nan_rows:
        if r > start:
            streamlines.append(pts[start:r])
        start = r + 1
    if start < len(pts):
        raise TckTruncatedError(f"{path}: last streamline is not terminated")
    if "count" in header:
        try:
            declared = int(header["count"])
        except ValueError:
            raise TckFormatError(f"{path}: bad count {header['count']!r}") from None
        if declared > len(streamlines):
            raise TckTruncatedError(f"{path}: header declares {declared} streamlines, found {len(streamlines)}")
    for k in ("datatype", "file", "count", "total_count"):
        header.pop(k, None)
    return Tractogram(streamlines, header)


def write_tck(t: Tractogram, path) -> None:
    keys = {k: v for k, v in t.header.items() if k not in ("datatype", "file", "count", "total_count")}
    lines = ["mrtrix tracks"]
    for k, v in keys.items():
        for part in str(v).split("\n"):
            lines.append(f"{k}: {part}")
    lines += ["datatype: Float32LE", f"count: {len(t)}", f"total_count: {len(t)}"]
    head = "\n".join(lines) + "\n"
    # the offset field is padded to a fixed width so its own length is stable
    offset = len((head + "file: . 0000000000\nEND\n").encode("latin-1"))
    head += f"file: . {offset:010d}\nEND\n"
    sep = np.full((1, 3), np.nan, dtype="<f4")
    chunks = []
    for s in t.streamlines:
        chunks.append(np.asarray(s, dtype="<f4"))
        chunks.append(sep)
    chunks.append(np.full((1, 3), np.inf, dtype="<f4"))
    body = np.concatenate(chunks).tobytes()
    Path(path).write_bytes(head.encode("latin-1") + body)


def arc_length(points) -> float:
    p = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0


def resample(points, n: int) -> np.ndarray:
    """``n`` points equally spaced by arc length; endpoints kept exactly."""
    if n < 2:
        raise ValueError("resample needs n >= 2")
    p = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(p[:1], n, axis=0)
    targets = np.linspace(0.0, total, n)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    # skip zero-length segments
    seg_len = seg[idx]
    t = np.where(seg_len > 0, (targets - cum[idx]) / np.where(seg_len > 0, seg_len, 1.0), 0.0)
    out = p[idx] + t[:, None] * (p[idx + 1] - p[idx])
    out[0] = p[0]
    out[-1] = p[-1]
    return out


def _dense_points(s: np.ndarray, step: float) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if len(s) == 1:
        return s
    seg = np.diff(s, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    counts = np.maximum(1, np.ceil(lens / step).astype(np.int64))
    t = np.concatenate([np.arange(c) / c for c in counts])
    rep = np.repeat(np.arange(len(seg)), counts)
    pts = s[rep] + t[:, None] * seg[rep]
    return np.vstack([pts, s[-1:]])


def voxelize(bundle, grid: Grid, step: float | None = None) -> BinaryMask:
    """Mark every voxel hit by a point sampled along the streamlines.

    The sampling step defaults to half the smallest voxel spacing.
    """
    if step is None:
        step = 0.5 * float(grid.spacing.min())
    out = np.zeros(grid.dims, dtype=bool)
    for s in bundle:
        pts = _dense_points(s, step)
        vox = np.floor(grid.world_to_voxel(pts) + 0.5).astype(np.int64)
        ok = np.all((vox >= 0) & (vox < np.array(grid.dims)), axis=1)
        v = vox[ok]
        out[v[:, 0], v[:, 1], v[:, 2]] = True
    return BinaryMask(grid, out)


def _canonical(s: np.ndarray) -> np.ndarray:
    """Orient a fiber so its first endpoint is lexicographically smallest."""
    a, b = tuple(s[0]), tuple(s[-1])
    return s[::-1] if b < a else s


def centerline(bundle, n: int = 50) -> np.ndarray:
    """Orientation-aligned pointwise mean of the resampled fibers.

    Seeded by the longest fiber (first one on ties); each other fiber, in
    input order, is flipped when that brings it closer to the running mean.
    """
    fibers = [np.asarray(s, dtype=np.float64) for s in bundle]
    if not fibers:
        raise ValueError("centerline of an empty bundle")
    lengths = [arc_length(f) for f in fibers]
    seed = int(np.argmax(lengths))
    mean = resample(_canonical(fibers[seed]), n)
    total = mean.copy()
    count = 1
    for i, f in enumerate(fibers):
        if i == seed:
            continue
        r = resample(f, n)
        fwd = np.linalg.norm(r - mean, axis=1).sum()
        rev = np.linalg.norm(r[::-1] - mean, axis=1).sum()
        if rev < fwd:
            r = r[::-1]
        total += r
        count += 1
        mean = total / count
    return mean
