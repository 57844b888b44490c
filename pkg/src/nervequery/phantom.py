"""Synthetic label volumes with ground-truth and spurious fibers.

Geometry is given in world millimetres (RAS). Structures are rasterized by
voxel centre containment; true fibers follow jittered waypoints sampled at a
fixed step, spurious fibers are either persistent random walks or jittered
"wrong paths" that break one clause of the phantom query.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_kv
from .tracts import Tractogram
from .volume import Grid, LabelVolume


@dataclass(frozen=True)
class StructureSpec:
    name: str
    label: int
    shape: str  # box | sphere | tube
    params: tuple[float, ...]

    def __post_init__(self):
        need = {"box": 6, "sphere": 4, "tube": 7}.get(self.shape)
        if need is None:
            raise ValueError(f"{self.name}: unknown shape {self.shape!r}")
        if len(self.params) != need:
            raise ValueError(f"{self.name}: {self.shape} takes {need} numbers, got {len(self.params)}")
        if self.label <= 0:
            raise ValueError(f"{self.name}: label must be positive")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        p = self.params
        if self.shape == "box":
            lo, hi = np.array(p[:3]), np.array(p[3:])
            return np.all((pts >= lo) & (pts <= hi), axis=1)
        if self.shape == "sphere":
            return np.linalg.norm(pts - np.array(p[:3]), axis=1) <= p[3]
        a, b, r = np.array(p[:3]), np.array(p[3:6]), p[6]
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(pts - (a + t[:, None] * ab), axis=1) <= r


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    structures: tuple[StructureSpec, ...] = ()
    true_count: int = 0
    true_path: tuple[tuple[float, float, float], ...] = ()
    jitter: float = 1.0
    step: float = 2.0
    spurious_count: int = 0
    spurious_mode: str = "mixed"  # random-walk | wrong-path | mixed
    random_walk_fraction: float = 0.4
    wrong_paths: tuple[tuple[tuple[float, float, float], ...], ...] = ()
    walk_length: tuple[float, float] = (40.0, 90.0)
    seed: int = 0
    name: str = "phantom"
    query: str = ""

    def __post_init__(self):
        labels = [s.label for s in self.structures]
        if len(set(labels)) != len(labels):
            raise ValueError("structure labels must be unique")
        names = [s.name for s in self.structures]
        if len(set(names)) != len(names):
            raise ValueError("structure names must be unique")
        if self.spurious_mode not in ("random-walk", "wrong-path", "mixed"):
            raise ValueError(f"unknown spurious mode {self.spurious_mode!r}")
        if self.true_count and len(self.true_path) < 2:
            raise ValueError("true fibers need at least two waypoints")
        if self.spurious_count and self.spurious_mode != "random-walk" and not self.wrong_paths:
            raise ValueError("wrong-path spurious fibers need at least one spurious.path")

    @property
    def grid(self) -> Grid:
        return Grid.from_spacing(self.dims, self.spacing, self.origin)


@dataclass(frozen=True, eq=False)
class Phantom:
    volume: LabelVolume
    tractogram: Tractogram
    is_true: np.ndarray
    spec: PhantomSpec

    @property
    def true_bundle(self) -> list[np.ndarray]:
        return [s for s, t in zip(self.tractogram.streamlines, self.is_true) if t]


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return vals


def _path(text: str):
    pts = tuple(_floats(p, 3) for p in text.split(";") if p.strip())
    if len(pts) < 2:
        raise ValueError(f"a path needs at least two waypoints: {text!r}")
    return pts


def parse_spec(text: str, source: str = "<phantom>") -> PhantomSpec:
    kv = parse_kv(text, source)
    kw: dict = {}
    structures = []
    wrong = []
    try:
        for key, value in kv.items():
            if key.startswith("structure."):
                parts = value.split()
                structures.append(StructureSpec(key[len("structure."):], int(parts[0]), parts[1],
                                                _floats(" ".join(parts[2:]))))
            elif key.startswith("spurious.path"):
                wrong.append((key, _path(value)))
            elif key == "dims":
                kw["dims"] = tuple(int(v) for v in value.split())
            elif key in ("spacing", "origin"):
                kw[key] = _floats(value, 3)
            elif key == "true.count":
                kw["true_count"] = int(value)
            elif key == "true.path":
                kw["true_path"] = _path(value)
            elif key == "true.jitter":
                kw["jitter"] = float(value)
            elif key == "step":
                kw["step"] = float(value)
            elif key == "spurious.count":
                kw["spurious_count"] = int(value)
            elif key == "spurious.mode":
                kw["spurious_mode"] = value
            elif key == "spurious.random_walk_fraction":
                kw["random_walk_fraction"] = float(value)
            elif key == "spurious.walk_length":
                kw["walk_length"] = _floats(value, 2)
            elif key == "seed":
                kw["seed"] = int(value)
            elif key == "name":
                kw["name"] = value
            elif key == "query":
                kw["query"] = value
            else:
                raise ConfigError(f"{source}: unknown phantom key {key!r}")
        if "dims" not in kw:
            raise ConfigError(f"{source}: 'dims' is required")
        wrong.sort(key=lambda kv_: kv_[0])
        return PhantomSpec(structures=tuple(structures), wrong_paths=tuple(p for _, p in wrong), **kw)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from None


def load_spec(path) -> PhantomSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_spec(text, str(path))


LUMBOSACRAL_TOY = """\
# two foramina stacked along z, a posterior "sacrum" plate and a muscle slab behind it
name = lumbosacral_toy
seed = 20250515
dims = 40 48 50
spacing = 2 2 2
origin = -40 -56 -50
structure.ForamenUpper = 1 box  -6 -6 24   6 6 36
structure.ForamenLower = 2 box  -6 -6 6    6 6 18
structure.Muscle       = 3 box  -14 -26 -40  14 -14 0
structure.Sacrum       = 4 box  -10 -13 -40  10 -7 40
step = 2.0
true.count = 100
true.jitter = 1.0
true.path = 0 0 44; 0 0 30; 0 0 12; 0 0 -20; 0 0 -44
spurious.count = 100
spurious.mode = mixed
spurious.random_walk_fraction = 0.4
spurious.walk_length = 40 90
# skips the lower foramen
spurious.path.1 = 0 0 44; 0 0 30; 0 0 24; 24 0 12; 24 0 -44
# leaves posterior-lateral of the sacrum plate
spurious.path.2 = 0 0 44; 0 0 30; 0 0 12; 22 -40 0; 22 -40 -40
# misses the upper foramen
spurious.path.3 = 30 0 44; 24 0 30; 0 0 12; 0 0 -20; 0 0 -44
query = crossing(ForamenUpper) then crossing(ForamenLower) then anterior_of(Muscle) then not posterior_of(Sacrum)
"""

PRESETS = {"lumbosacral-toy": LUMBOSACRAL_TOY}


def preset(name: str, **overrides) -> PhantomSpec:
    spec = parse_spec(PRESETS[name], name)
    if overrides:
        from dataclasses import replace

        spec = replace(spec, **overrides)
    return spec


def rasterize(spec: PhantomSpec) -> LabelVolume:
    grid = spec.grid
    centers = grid.voxel_centers()
    data = np.zeros(grid.size, dtype=np.int16 if max((s.label for s in spec.structures), default=0) > 255 else np.uint8)
    for s in spec.structures:
        inside = s.contains(centers)
        clash = inside & (data != 0)
        if clash.any():
            other = {st.label: st.name for st in spec.structures}[int(data[clash][0])]
            raise ValueError(f"structures {s.name!r} and {other!r} overlap")
        data[inside] = s.label
    names = {s.label: s.name for s in spec.structures}
    empty = frozenset(s.label for s in spec.structures if not np.any(data == s.label))
    return LabelVolume(grid, data.reshape(grid.dims), names, empty)


def _polyline(waypoints: np.ndarray, step: float) -> np.ndarray:
    seg = np.diff(waypoints, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    n = max(2, int(np.ceil(cum[-1] / step)) + 1)
    t = np.linspace(0.0, cum[-1], n)
    return np.stack([np.interp(t, cum, waypoints[:, d]) for d in range(3)], axis=1)


def _jittered(path, sigma: float, step: float, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(path, dtype=np.float64)
    w = w + rng.normal(0.0, sigma, size=w.shape) if sigma > 0 else w
    return _polyline(w, step)


def _random_walk(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    lo = np.array(spec.origin, dtype=np.float64)
    hi = lo + (np.array(spec.dims) - 1) * np.array(spec.spacing)
    while True:
        length = rng.uniform(*spec.walk_length)
        n = max(2, int(length / spec.step) + 1)
        p = rng.uniform(lo + 4.0, hi - 4.0)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        pts = [p]
        for _ in range(n - 1):
            d = d + 0.3 * rng.normal(size=3)
            d /= np.linalg.norm(d)
            p = p + spec.step * d
            if np.any(p < lo) or np.any(p > hi):
                break
            pts.append(p)
        if len(pts) >= 3:
            return np.array(pts)


def generate(spec: PhantomSpec) -> Phantom:
    """Label volume, tractogram and per-fiber truth flags; fully determined by the seed."""
    vol = rasterize(spec)
    rng = np.random.default_rng(spec.seed)
    fibers = []
    truth = []
    for _ in range(spec.true_count):
        fibers.append(_jittered(spec.true_path, spec.jitter, spec.step, rng))
        truth.append(True)
    if spec.spurious_mode == "random-walk":
        n_walk = spec.spurious_count
    elif spec.spurious_mode == "wrong-path":
        n_walk = 0
    else:
        n_walk = int(round(spec.random_walk_fraction * spec.spurious_count))
    for _ in range(n_walk):
        fibers.append(_random_walk(spec, rng))
        truth.append(False)
    for i in range(spec.spurious_count - n_walk):
        path = spec.wrong_paths[i % len(spec.wrong_paths)]
        fibers.append(_jittered(path, spec.jitter, spec.step, rng))
        truth.append(False)
    order = rng.permutation(len(fibers))
    # float32 so in-memory fibers equal what a TCK round trip yields
    streamlines = [fibers[i].astype(np.float32) for i in order]
    is_true = np.array([truth[i] for i in order], dtype=bool)
    header = {"generator": f"nervequery phantom {spec.name}", "seed": str(spec.seed)}
    return Phantom(vol, Tractogram(streamlines, header), is_true, spec)
