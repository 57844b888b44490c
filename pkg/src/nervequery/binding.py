"""Attach fuzzy landscapes to the atoms of a parsed query."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .query import And, Atom, Expr, Not, Or, Query, Stage, iter_atoms
from .relations import RelationParams, landscape_for
from .volume import FuzzyLandscape, Grid, LabelVolume


class BindingError(ValueError):
    def __init__(self, unresolved):
        self.unresolved = sorted(unresolved)
        super().__init__("unresolved structure name(s): " + ", ".join(self.unresolved))


@dataclass(frozen=True, eq=False)
class BoundQuery:
    query: Query
    grid: Grid
    landscapes: dict[Atom, FuzzyLandscape]
    thresholds: tuple[float, ...]

    @property
    def name(self) -> str:
        return self.query.name

    @property
    def stages(self) -> tuple[Stage, ...]:
        return self.query.stages


def bind(query: Query, vol: LabelVolume, params: RelationParams = RelationParams(),
         default_threshold: float = 0.5) -> BoundQuery:
    """Compute one landscape per distinct atom; NOT is left to evaluation time."""
    known = set(vol.label_names.values())
    non_empty = {vol.label_names[lid] for lid in np.unique(vol.data).tolist() if lid in vol.label_names}
    unresolved = set()
    for atom in query.atoms():
        for name in atom.structures():
            if name not in known or name not in non_empty:
                unresolved.add(name)
    if unresolved:
        raise BindingError(unresolved)
    landscapes = {atom: landscape_for(vol, atom.to_relation(), params) for atom in query.atoms()}
    thresholds = tuple(st.threshold if st.threshold is not None else default_threshold for st in query.stages)
    return BoundQuery(query, vol.grid, landscapes, thresholds)


def evaluate_expr(expr: Expr, degrees: dict[Atom, np.ndarray]) -> np.ndarray:
    """Pointwise fuzzy logic: AND=min, OR=max, NOT=1-x."""
    if isinstance(expr, Atom):
        return degrees[expr]
    if isinstance(expr, Not):
        return 1.0 - evaluate_expr(expr.child, degrees)
    parts = [evaluate_expr(c, degrees) for c in expr.children]
    if isinstance(expr, And):
        return np.minimum.reduce(parts)
    if isinstance(expr, Or):
        return np.maximum.reduce(parts)
    raise TypeError(expr)


def stage_landscape(bq: BoundQuery, stage_index: int) -> FuzzyLandscape:
    """Voxelwise degree of one stage expression (``stage_index`` is 0-based)."""
    stage = bq.stages[stage_index]
    degrees = {a: bq.landscapes[a].data for a in iter_atoms(stage.expr)}
    return FuzzyLandscape(bq.grid, evaluate_expr(stage.expr, degrees))
