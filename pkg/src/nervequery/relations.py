"""Fuzzy landscapes of spatial relations to labelled structures.

Every landscape is a :class:`FuzzyLandscape` on the grid of the label volume
it was computed from. Directions follow RAS: ``anterior`` is +y, ``right`` is
+x, ``superior`` is +z, and ``X_of(S)`` is the region displaced from ``S``
towards ``X``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _kernels
from .volume import BinaryMask, FuzzyLandscape, Grid, LabelVolume, squared_distance_transform

DIRECTIONS = {
    "anterior": (0.0, 1.0, 0.0),
    "posterior": (0.0, -1.0, 0.0),
    "right": (1.0, 0.0, 0.0),
    "left": (-1.0, 0.0, 0.0),
    "superior": (0.0, 0.0, 1.0),
    "inferior": (0.0, 0.0, -1.0),
}


DIRECTIONAL_METHODS = ("auto", "brute", "sliced")


class RelationError(ValueError):
    """A relation cannot be evaluated on the given label volume."""


@dataclass(frozen=True)
class Crossing:
    structure: str


@dataclass(frozen=True)
class DirectionalOf:
    structure: str
    direction: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise RelationError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class Between:
    a: str
    b: str


@dataclass(frozen=True)
class NearTo:
    structure: str
    distance: float


RelationKind = Union[Crossing, DirectionalOf, Between, NearTo]


@dataclass(frozen=True)
class RelationParams:
    crossing_decay_tau: float = 3.0
    directional_kappa: float = 1.0
    between_dilation_limit: float = 100.0
    near_decay: float = 5.0
    # "brute": max over reference voxels; "sliced": per-plane distance maps,
    # needs an axis-aligned direction; "auto": sliced when possible. All exact.
    directional_method: str = "auto"

    def __post_init__(self):
        for name in ("crossing_decay_tau", "between_dilation_limit", "near_decay"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.directional_kappa >= 1:
            raise ValueError("directional_kappa must be >= 1")
        if self.directional_method not in DIRECTIONAL_METHODS:
            raise ValueError(f"unknown directional_method {self.directional_method!r}")


def _structure(vol: LabelVolume, name: str) -> np.ndarray:
    try:
        lid = vol.label_id(name)
    except KeyError:
        raise RelationError(f"unknown structure {name!r}") from None
    mask = vol.data == lid
    if not mask.any():
        raise RelationError(f"structure {name!r} (label {lid}) is empty")
    return mask


def _check(data: np.ndarray) -> np.ndarray:
    if data.size and not (data.min() >= 0.0 and data.max() <= 1.0):
        raise AssertionError("landscape escaped [0, 1]")
    return data


def crossing_landscape(vol: LabelVolume, structure: str, params: RelationParams = RelationParams()) -> FuzzyLandscape:
    """``max(0, 1 - d/tau)`` with ``d`` the distance in mm to the structure."""
    mask = _structure(vol, structure)
    d = np.sqrt(squared_distance_transform(mask, vol.grid.spacing))
    mu = np.maximum(0.0, 1.0 - d / params.crossing_decay_tau)
    return FuzzyLandscape(vol.grid, _check(mu))


def near_landscape(vol: LabelVolume, structure: str, distance: float,
                   params: RelationParams = RelationParams()) -> FuzzyLandscape:
    """1 within ``distance`` mm of the structure, then linear decay over ``near_decay`` mm."""
    mask = _structure(vol, structure)
    d = np.sqrt(squared_distance_transform(mask, vol.grid.spacing))
    mu = np.clip(1.0 - (d - distance) / params.near_decay, 0.0, 1.0)
    return FuzzyLandscape(vol.grid, _check(mu))


def angular_degree(cos_theta, kappa: float = 1.0) -> np.ndarray:
    """``max(0, 1 - 2*theta/pi) ** kappa``; cosines below -1 mean "no reference" and map to 0."""
    c = np.asarray(cos_theta, dtype=np.float64)
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    mu = np.maximum(0.0, 1.0 - 2.0 * theta / np.pi) ** kappa
    return np.where(c < -1.5, 0.0, mu)


def _orthogonal_axis(affine: np.ndarray, u: np.ndarray):
    """``(axis, signed step in mm)`` when the voxel axes are orthogonal and one is parallel to ``u``."""
    lin = affine[:3, :3]
    gram = lin.T @ lin
    off = gram - np.diag(np.diag(gram))
    if np.abs(off).max() > 1e-9 * np.abs(np.diag(gram)).max():
        return None
    step = _axis_step(affine, u)
    if step is None:
        return None
    c = int(np.flatnonzero(step)[0])
    return c, float(step[c]) * float(np.linalg.norm(lin[:, c]))


def _sliced_cos(grid: Grid, mask: np.ndarray, axis: int, step: float) -> np.ndarray:
    sp = grid.spacing
    moved = np.ascontiguousarray(np.moveaxis(mask, axis, 0))
    others = [a for a in range(3) if a != axis]
    d2 = squared_distance_transform(moved, (1.0, sp[others[0]], sp[others[1]]), axes=(1, 2))
    c = _kernels.directional_sliced(np.ascontiguousarray(d2), step)
    c = np.ascontiguousarray(np.moveaxis(c, 0, axis))
    c[mask] = 1.0
    return c


def _axis_step(affine: np.ndarray, u: np.ndarray):
    """Voxel step whose world image points along ``u``, if the affine is axis aligned."""
    lin = affine[:3, :3]
    for c in range(3):
        col = lin[:, c]
        n = np.linalg.norm(col)
        cosv = float(col @ u) / n
        if abs(abs(cosv) - 1.0) < 1e-12:
            step = np.zeros(3, dtype=np.int64)
            step[c] = 1 if cosv > 0 else -1
            return step
    return None


def reference_points(grid: Grid, mask: np.ndarray, u: np.ndarray, truncated: bool) -> np.ndarray:
    """World coordinates of the structure voxels that can realise the maximum.

    Without truncation and with ``u`` along a voxel axis, a voxel whose
    neighbour one step against ``u`` is also inside is never better than that
    neighbour, so only the voxels on the trailing face are kept.
    """
    step = None if truncated else _axis_step(grid.affine, u)
    if step is None:
        return grid.voxel_centers(mask)
    behind = np.zeros_like(mask)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    for ax in range(3):
        if step[ax] > 0:
            src[ax], dst[ax] = slice(0, -1), slice(1, None)
        elif step[ax] < 0:
            src[ax], dst[ax] = slice(1, None), slice(0, -1)
    behind[tuple(dst)] = mask[tuple(src)]
    return grid.voxel_centers(mask & ~behind)


def directional_cos(grid: Grid, mask: np.ndarray, u, max_dist: float = np.inf,
                    method: str = "auto") -> np.ndarray:
    """Best cosine between ``x - p`` and ``u`` over structure voxels ``p`` (1 inside).

    Voxels with no usable reference get -2; the sliced method also reports -2
    where the best cosine is not positive, which maps to the same degree 0.
    """
    if method not in DIRECTIONAL_METHODS:
        raise ValueError(f"unknown directional_method {method!r}")
    u = np.asarray(u, dtype=np.float64)
    u = u / np.linalg.norm(u)
    mask = np.asarray(mask, dtype=bool)
    dims = np.array(grid.dims, dtype=np.int64)
    affine = np.array(grid.affine)
    if method != "brute":
        ax = _orthogonal_axis(affine, u) if not np.isfinite(max_dist) else None
        if ax is not None:
            return _sliced_cos(grid, mask, *ax)
        if method == "sliced":
            raise ValueError("sliced method needs an untruncated direction along an orthogonal voxel axis")
    refs = np.ascontiguousarray(reference_points(grid, mask, u, np.isfinite(max_dist)))
    return _kernels.directional_cos(dims, affine, mask, refs, u, float(max_dist))


def directional_landscape(vol: LabelVolume, structure: str, direction: str,
                          params: RelationParams = RelationParams()) -> FuzzyLandscape:
    """Fuzzy dilation of the structure by an angular structuring element."""
    if direction not in DIRECTIONS:
        raise RelationError(f"unknown direction {direction!r}")
    mask = _structure(vol, structure)
    c = directional_cos(vol.grid, mask, DIRECTIONS[direction], method=params.directional_method)
    mu = angular_degree(c, params.directional_kappa)
    mu[mask] = 1.0
    return FuzzyLandscape(vol.grid, _check(mu))


def between_landscape(vol: LabelVolume, a: str, b: str,
                      params: RelationParams = RelationParams()) -> FuzzyLandscape:
    """min of the dilation of ``a`` towards ``b`` and of ``b`` towards ``a``; 0 inside both."""
    if a == b:
        raise RelationError(f"between() needs two distinct structures, got {a!r} twice")
    ma = _structure(vol, a)
    mb = _structure(vol, b)
    if (ma & mb).any():
        raise RelationError(f"structures {a!r} and {b!r} overlap")
    ca = vol.grid.voxel_centers(ma).mean(axis=0)
    cb = vol.grid.voxel_centers(mb).mean(axis=0)
    axis = cb - ca
    if np.linalg.norm(axis) == 0:
        raise RelationError(f"structures {a!r} and {b!r} share a centroid")
    lim = params.between_dilation_limit
    method = params.directional_method
    da = angular_degree(directional_cos(vol.grid, ma, axis, lim, method), params.directional_kappa)
    db = angular_degree(directional_cos(vol.grid, mb, -axis, lim, method), params.directional_kappa)
    mu = np.minimum(da, db)
    mu[ma | mb] = 0.0
    return FuzzyLandscape(vol.grid, _check(mu))


def landscape_for(vol: LabelVolume, rel: RelationKind, params: RelationParams = RelationParams()) -> FuzzyLandscape:
    if isinstance(rel, Crossing):
        return crossing_landscape(vol, rel.structure, params)
    if isinstance(rel, DirectionalOf):
        return directional_landscape(vol, rel.structure, rel.direction, params)
    if isinstance(rel, Between):
        return between_landscape(vol, rel.a, rel.b, params)
    if isinstance(rel, NearTo):
        return near_landscape(vol, rel.structure, rel.distance, params)
    raise TypeError(f"not a relation: {rel!r}")


def fuse(op: str, *landscapes: FuzzyLandscape) -> FuzzyLandscape:
    """Pointwise ``min`` (AND), ``max`` (OR) or ``not`` (complement, one operand)."""
    if not landscapes:
        raise ValueError("fuse needs at least one landscape")
    grid = landscapes[0].grid
    for other in landscapes[1:]:
        grid.require_same(other.grid)
    if op == "not":
        if len(landscapes) != 1:
            raise ValueError("complement takes exactly one landscape")
        data = 1.0 - landscapes[0].data
    elif op == "min":
        data = np.minimum.reduce([f.data for f in landscapes])
    elif op == "max":
        data = np.maximum.reduce([f.data for f in landscapes])
    else:
        raise ValueError(f"unknown fusion operator {op!r}")
    return FuzzyLandscape(grid, _check(data))


def fuzzy_and(*landscapes):
    return fuse("min", *landscapes)


def fuzzy_or(*landscapes):
    return fuse("max", *landscapes)


def fuzzy_not(landscape):
    return fuse("not", landscape)


def alpha_cut(f: FuzzyLandscape, alpha: float = 0.5) -> BinaryMask:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return BinaryMask(f.grid, f.data >= alpha)
