"""Voxel grids, volume types and the spatial primitives shared across the package.

Arrays are indexed ``data[i, j, k]`` with ``i`` the first voxel axis (x). The
affine maps ``(i, j, k, 1)`` to world millimetres in RAS orientation.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels


class GridMismatchError(ValueError):
    """Raised when volumes that must share a grid do not."""


@dataclass(frozen=True, eq=False)
class Grid:
    dims: tuple[int, int, int]
    affine: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"grid dims must be 3 positive integers, got {self.dims}")
        aff = np.array(self.affine, dtype=np.float64).reshape(4, 4)
        if not np.all(np.isfinite(aff)):
            raise ValueError("affine contains non-finite values")
        if abs(np.linalg.det(aff[:3, :3])) < 1e-12:
            raise ValueError("affine is not invertible")
        aff.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "affine", aff)
        inv = np.linalg.inv(aff)
        inv.setflags(write=False)
        object.__setattr__(self, "_inverse", inv)

    @classmethod
    def from_spacing(cls, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "Grid":
        aff = np.diag([*map(float, spacing), 1.0])
        aff[:3, 3] = origin
        return cls(tuple(dims), aff)

    @property
    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    @property
    def inverse(self) -> np.ndarray:
        return self._inverse

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def voxel_to_world(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.float64)
        return ijk @ self.affine[:3, :3].T + self.affine[:3, 3]

    def world_to_voxel(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64)
        return xyz @ self._inverse[:3, :3].T + self._inverse[:3, 3]

    def voxel_centers(self, mask=None) -> np.ndarray:
        """World coordinates of all voxels (or of the true voxels of ``mask``)."""
        if mask is None:
            idx = np.indices(self.dims).reshape(3, -1).T
        else:
            idx = np.argwhere(mask)
        a = self.affine
        i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
        return np.stack(
            [a[r, 0] * i + a[r, 1] * j + a[r, 2] * k + a[r, 3] for r in range(3)], axis=1
        ).astype(np.float64)

    def matches(self, other: "Grid", atol: float = 1e-6) -> bool:
        return self.dims == other.dims and np.allclose(self.affine, other.affine, rtol=0, atol=atol)

    def require_same(self, other: "Grid") -> None:
        if not self.matches(other):
            raise GridMismatchError(f"grid mismatch: {self.dims} vs {other.dims} or differing affines")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabelVolume:
    grid: Grid
    data: np.ndarray
    label_names: dict[int, str] = field(default_factory=dict)
    empty_labels: frozenset[int] = frozenset()

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.grid.dims:
            raise ValueError(f"label data shape {data.shape} does not match grid {self.grid.dims}")
        if not np.issubdtype(data.dtype, np.integer):
            raise ValueError(f"label data must be integer, got {data.dtype}")
        if data.size and data.min() < 0:
            raise ValueError("labels must be non-negative")
        present = set(np.unique(data).tolist())
        missing = [lid for lid in self.label_names if lid not in present and lid not in self.empty_labels]
        if missing:
            raise ValueError(f"named labels absent from data and not declared empty: {sorted(missing)}")
        names = list(self.label_names.values())
        if len(set(names)) != len(names):
            raise ValueError("duplicate structure names in label map")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "label_names", dict(self.label_names))
        object.__setattr__(self, "empty_labels", frozenset(self.empty_labels))

    @property
    def dims(self):
        return self.grid.dims

    @property
    def affine(self):
        return self.grid.affine

    @property
    def spacing(self):
        return self.grid.spacing

    def label_id(self, name: str) -> int:
        for lid, n in self.label_names.items():
            if n == name:
                return lid
        raise KeyError(name)

    def mask(self, name: str) -> "BinaryMask":
        return BinaryMask(self.grid, self.data == self.label_id(name))


@dataclass(frozen=True, eq=False)
class FuzzyLandscape:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != self.grid.dims:
            raise ValueError(f"landscape shape {data.shape} does not match grid {self.grid.dims}")
        if data.size and not (np.all(np.isfinite(data)) and data.min() >= 0.0 and data.max() <= 1.0):
            raise ValueError("landscape values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return self.grid.dims

    @property
    def affine(self):
        return self.grid.affine

    @property
    def spacing(self):
        return self.grid.spacing


@dataclass(frozen=True, eq=False)
class BinaryMask:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.grid.dims:
            raise ValueError(f"mask shape {data.shape} does not match grid {self.grid.dims}")
        object.__setattr__(self, "data", _frozen(data.astype(bool, copy=False)))

    @property
    def dims(self):
        return self.grid.dims

    @property
    def affine(self):
        return self.grid.affine

    @property
    def spacing(self):
        return self.grid.spacing

    def count(self) -> int:
        return int(self.data.sum())


def _grid_of(v) -> Grid:
    return v if isinstance(v, Grid) else v.grid


def world_to_voxel(v, p) -> np.ndarray:
    """Continuous voxel coordinates of world point(s) ``p``; no bounds checking."""
    return _grid_of(v).world_to_voxel(p)


def voxel_to_world(v, ijk) -> np.ndarray:
    return _grid_of(v).voxel_to_world(ijk)


def sample_trilinear(f: FuzzyLandscape, p) -> float | np.ndarray:
    """Trilinear interpolation of ``f`` at world point(s) ``p``.

    Points outside the hull of voxel centres sample as 0.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    coords = np.ascontiguousarray(f.grid.world_to_voxel(p.reshape(-1, 3)))
    out = _kernels.sample_trilinear_coords(f.data, coords)
    return float(out[0]) if single else out


def squared_distance_transform(mask: np.ndarray, spacing, axes=(0, 1, 2)) -> np.ndarray:
    """Exact squared Euclidean distance (mm²) from every voxel to the nearest true voxel.

    Restricting ``axes`` gives the distance within lines or planes, e.g.
    ``axes=(1, 2)`` treats each ``[i, :, :]`` slice independently.
    """
    mask = np.asarray(mask, dtype=bool)
    f = np.where(mask, 0.0, np.inf)
    for axis in axes:
        moved = np.moveaxis(f, axis, -1)
        shape = moved.shape
        lines = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
        res = _kernels.edt_pass(lines, float(spacing[axis]))
        f = np.moveaxis(res.reshape(shape), -1, axis)
    return np.ascontiguousarray(f)


def distance_transform(mask: BinaryMask) -> tuple[np.ndarray, bool]:
    """Euclidean distance in mm to the nearest true voxel centre.

    Returns ``(distances, empty)``; an all-false mask yields an all-infinite
    volume with ``empty`` set so callers can refuse it.
    """
    empty = not mask.data.any()
    d2 = squared_distance_transform(mask.data, mask.grid.spacing)
    return np.sqrt(d2), empty


_NAME = re.compile(r"[A-Za-z0-9_]+")


def read_label_names(path) -> tuple[dict[int, str], frozenset[int]]:
    """Read a ``label_id<TAB>Name[<TAB>empty]`` sidecar file."""
    names: dict[int, str] = {}
    empty = set()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        try:
            lid = int(parts[0])
            name = parts[1].strip()
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: expected 'label_id<TAB>Name'") from None
        if lid in names:
            raise ValueError(f"{path}:{lineno}: duplicate label id {lid}")
        if not _NAME.fullmatch(name):
            raise ValueError(f"{path}:{lineno}: structure name {name!r} is not an identifier")
        if name in names.values():
            raise ValueError(f"{path}:{lineno}: duplicate structure name {name!r}")
        names[lid] = name
        extra = [p.strip().lower() for p in parts[2:]]
        if extra and extra != ["empty"]:
            raise ValueError(f"{path}:{lineno}: unexpected columns {parts[2:]}")
        if extra:
            empty.add(lid)
    return names, frozenset(empty)


def write_label_names(names: dict[int, str], path, empty=()) -> None:
    lines = ["# label_id\tname"]
    for lid in sorted(names):
        lines.append(f"{lid}\t{names[lid]}" + ("\tempty" if lid in empty else ""))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
