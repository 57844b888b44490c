import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nervequery.relations import (
    DIRECTIONS, Between, Crossing, DirectionalOf, NearTo, RelationError, RelationParams, alpha_cut,
    angular_degree, between_landscape, crossing_landscape, directional_cos, directional_landscape, fuse,
    fuzzy_and, fuzzy_not, fuzzy_or, landscape_for, near_landscape,
)
from nervequery.volume import FuzzyLandscape, Grid, GridMismatchError, LabelVolume

from conftest import (
    brute_sq_edt, label_volume, oracle_between, oracle_crossing, oracle_directional, random_mask,
    random_two_structures,
)


def single_voxel(dims=(9, 9, 9), at=(4, 4, 4), spacing=(1.0, 1.0, 1.0)):
    return label_volume(dims, {"S": (*at, *(a + 1 for a in at))}, spacing=spacing)


def vol_from_mask(mask, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return LabelVolume(Grid.from_spacing(mask.shape, spacing, origin), mask.astype(np.uint8), {1: "S"})


# --- crossing -------------------------------------------------------------------


def test_crossing_decay_values():
    v = single_voxel(spacing=(1.5, 1.5, 1.5))
    mu = crossing_landscape(v, "S").data
    assert mu[4, 4, 4] == 1.0
    assert mu[5, 4, 4] == pytest.approx(0.5, abs=1e-12)
    assert mu[6, 4, 4] == 0.0
    assert mu[8, 8, 8] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_crossing_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    m = random_mask(rng, (10, 9, 8))
    v = vol_from_mask(m, spacing=(0.8, 1.0, 1.7))
    got = crossing_landscape(v, "S", RelationParams(crossing_decay_tau=2.5)).data
    assert np.abs(got - oracle_crossing(v.grid, m, 2.5)).max() <= 1e-12


def test_crossing_is_monotone_in_structure(rng):
    small = random_mask(rng, (10, 10, 10))
    big = small | random_mask(rng, (10, 10, 10))
    a = crossing_landscape(vol_from_mask(small), "S").data
    b = crossing_landscape(vol_from_mask(big), "S").data
    assert np.all(a <= b)


def test_empty_or_unknown_structure_is_named():
    g = Grid.from_spacing((3, 3, 3))
    v = LabelVolume(g, np.zeros((3, 3, 3), np.uint8), {1: "Ghost"}, {1})
    with pytest.raises(RelationError, match="Ghost"):
        crossing_landscape(v, "Ghost")
    with pytest.raises(RelationError, match="Nobody"):
        directional_landscape(v, "Nobody", "anterior")


def test_alpha_cut_of_crossing_dilates_by_half_tau():
    m = np.zeros((11, 11, 11), bool)
    m[4:7, 4:7, 4:7] = True
    v = vol_from_mask(m, spacing=(0.5, 0.5, 0.5))
    cut = alpha_cut(crossing_landscape(v, "S"), 0.5).data
    expect = np.sqrt(brute_sq_edt(m, (0.5, 0.5, 0.5))) <= 1.5 + 1e-12
    assert np.array_equal(cut, expect)


# --- directional ----------------------------------------------------------------


@pytest.mark.parametrize("direction, probe, expect", [
    ("anterior", (4, 7, 4), 1.0),
    ("anterior", (7, 7, 4), 0.5),
    ("anterior", (7, 4, 4), 0.0),
    ("anterior", (4, 1, 4), 0.0),
    ("right", (6, 4, 4), 1.0),
    ("left", (2, 4, 4), 1.0),
    ("left", (2, 4, 6), 0.5),
    ("superior", (4, 4, 8), 1.0),
    ("inferior", (4, 6, 2), 0.5),
    ("posterior", (4, 4, 4), 1.0),
])
def test_directional_analytic_values(direction, probe, expect):
    mu = directional_landscape(single_voxel(), "S", direction).data
    assert mu[probe] == pytest.approx(expect, abs=1e-12)


def test_kappa_sharpens_falloff():
    v = single_voxel()
    mu1 = directional_landscape(v, "S", "anterior").data
    mu2 = directional_landscape(v, "S", "anterior", RelationParams(directional_kappa=2.0)).data
    assert mu2[7, 7, 4] == pytest.approx(0.25)
    assert np.all(mu2 <= mu1)


@pytest.mark.parametrize("method", ["auto", "brute", "sliced"])
@pytest.mark.parametrize("seed", range(4))
def test_directional_matches_oracle(seed, method):
    rng = np.random.default_rng(100 + seed)
    m = random_mask(rng, (9, 10, 8))
    v = vol_from_mask(m, spacing=tuple(rng.choice([0.5, 1.0, 2.0], 3)))
    p = RelationParams(directional_method=method)
    for d in DIRECTIONS:
        got = directional_landscape(v, "S", d, p).data
        assert np.abs(got - oracle_directional(v.grid, m, DIRECTIONS[d])).max() <= 1e-9, d


def test_directional_on_rotated_grid_uses_brute_force(rng):
    m = random_mask(rng, (7, 7, 7))
    c, s = np.cos(0.3), np.sin(0.3)
    aff = np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1.5, 0], [0, 0, 0, 1.0]])
    v = LabelVolume(Grid((7, 7, 7), aff), m.astype(np.uint8), {1: "S"})
    got = directional_landscape(v, "S", "anterior").data
    assert np.abs(got - oracle_directional(v.grid, m, DIRECTIONS["anterior"])).max() <= 1e-9
    with pytest.raises(ValueError):
        directional_landscape(v, "S", "anterior", RelationParams(directional_method="sliced"))


def test_sliced_and_brute_cosines_agree_on_permuted_axes(rng):
    m = random_mask(rng, (6, 8, 7))
    aff = np.array([[0, 0, -2.0, 5], [1.0, 0, 0, -1], [0, 0.5, 0, 2], [0, 0, 0, 1]])
    g = Grid((6, 8, 7), aff)
    for u in DIRECTIONS.values():
        a = angular_degree(directional_cos(g, m, u, method="brute"))
        b = angular_degree(directional_cos(g, m, u, method="sliced"))
        assert np.abs(a - b).max() <= 1e-12


def test_directional_reflection_symmetry(rng):
    """Mirroring the structure along the direction axis swaps opposite directions."""
    m = random_mask(rng, (8, 9, 7))
    v = vol_from_mask(m)
    vf = vol_from_mask(m[:, ::-1, :].copy())
    ant = directional_landscape(v, "S", "anterior").data
    post_f = directional_landscape(vf, "S", "posterior").data
    assert np.abs(ant - post_f[:, ::-1, :]).max() <= 1e-12
    # mirroring across a perpendicular axis leaves the landscape mirrored
    vx = vol_from_mask(m[::-1].copy())
    assert np.abs(ant - directional_landscape(vx, "S", "anterior").data[::-1]).max() <= 1e-12


def test_left_and_right_exclude_each_other_on_the_axis():
    v = single_voxel()
    left = directional_landscape(v, "S", "left").data
    right = directional_landscape(v, "S", "right").data
    for i in range(9):
        if i != 4:
            assert min(left[i, 4, 4], right[i, 4, 4]) == 0.0


def test_landscapes_stay_in_unit_interval(rng):
    data = random_two_structures(rng, (8, 8, 8))
    v = LabelVolume(Grid.from_spacing((8, 8, 8)), data, {1: "A", 2: "B"})
    for rel in [Crossing("A"), DirectionalOf("B", "inferior"), NearTo("A", 2.0)]:
        mu = landscape_for(v, rel).data
        assert mu.min() >= 0.0 and mu.max() <= 1.0


# --- between --------------------------------------------------------------------


def two_voxels(dims=(13, 9, 9), a=(2, 4, 4), b=(10, 4, 4), **kw):
    return label_volume(dims, {"A": (*a, *(x + 1 for x in a)), "B": (*b, *(x + 1 for x in b))}, **kw)


def test_between_midpoint_and_inside():
    v = two_voxels()
    mu = between_landscape(v, "A", "B").data
    assert mu[6, 4, 4] == 1.0
    assert mu[2, 4, 4] == 0.0 and mu[10, 4, 4] == 0.0
    assert mu[0, 4, 4] == 0.0  # beyond A, pointing away from B
    assert mu[6, 8, 4] == pytest.approx(1.0 - 2 * np.arctan2(4, 4) / np.pi)


def test_between_far_lateral_offset_is_zero_past_the_limit():
    v = two_voxels(spacing=(1.0, 10.0, 1.0))
    # 40 mm lateral, 4 mm along the axis: ~84 deg from each structure, degree ~0.06 ...
    mu = between_landscape(v, "A", "B").data
    assert 0.0 < mu[6, 8, 4] < 0.5
    # ... and with the dilation truncated below that distance it vanishes
    mu = between_landscape(v, "A", "B", RelationParams(between_dilation_limit=30.0)).data
    assert mu[6, 8, 4] == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_between_matches_oracle(seed):
    rng = np.random.default_rng(200 + seed)
    data = random_two_structures(rng, (9, 8, 10))
    g = Grid.from_spacing((9, 8, 10), (1.0, 1.5, 0.75))
    v = LabelVolume(g, data, {1: "A", 2: "B"})
    try:
        got = between_landscape(v, "A", "B", RelationParams(between_dilation_limit=6.0)).data
    except RelationError:
        pytest.skip("structures share a centroid")
    ref = oracle_between(g, data == 1, data == 2, limit=6.0)
    assert np.abs(got - ref).max() <= 1e-9


def test_between_errors():
    v = two_voxels()
    with pytest.raises(RelationError, match="distinct"):
        between_landscape(v, "A", "A")
    boxes = {"A": (2, 4, 4, 3, 5, 5), "A2": (6, 4, 4, 7, 5, 5), "B": (4, 2, 4, 5, 3, 5), "B2": (4, 6, 4, 5, 7, 5)}
    d = label_volume((9, 9, 9), boxes).data.copy()
    d[d == 2] = 1
    d[d == 4] = 3
    sym = LabelVolume(Grid.from_spacing((9, 9, 9)), d, {1: "A", 3: "B"})
    with pytest.raises(RelationError, match="centroid"):
        between_landscape(sym, "A", "B")


# --- near, fusion, alpha cut ----------------------------------------------------


def test_near_profile():
    v = single_voxel(dims=(15, 3, 3), at=(0, 1, 1))
    mu = near_landscape(v, "S", 4.0, RelationParams(near_decay=5.0)).data
    assert list(mu[:11, 1, 1]) == pytest.approx([1, 1, 1, 1, 1, 0.8, 0.6, 0.4, 0.2, 0.0, 0.0])


def _land(values):
    return FuzzyLandscape(Grid.from_spacing(values.shape), values)


@given(st.lists(st.floats(0, 1), min_size=8, max_size=8), st.lists(st.floats(0, 1), min_size=8, max_size=8))
@settings(max_examples=100, deadline=None)
def test_fusion_laws(a, b):
    fa = _land(np.array(a).reshape(2, 2, 2))
    fb = _land(np.array(b).reshape(2, 2, 2))
    assert np.array_equal(fuzzy_and(fa, fa).data, fa.data)
    assert np.allclose(fuzzy_not(fuzzy_not(fa)).data, fa.data, atol=1e-15)
    assert np.all(fuzzy_and(fa, fuzzy_not(fa)).data <= 0.5)
    assert np.array_equal(fuzzy_or(fa, fb).data, np.maximum(fa.data, fb.data))
    assert np.array_equal(fuse("min", fa, fb).data, fuse("min", fb, fa).data)


def test_fusion_errors():
    a = _land(np.zeros((2, 2, 2)))
    with pytest.raises(GridMismatchError):
        fuzzy_and(a, _land(np.zeros((2, 2, 3))))
    with pytest.raises(ValueError):
        fuse("xor", a)
    with pytest.raises(ValueError):
        fuse("not", a, a)


def test_alpha_cut_constant():
    f = _land(np.full((2, 2, 2), 0.7))
    assert alpha_cut(f).data.all()
    assert not alpha_cut(f, 0.8).data.any()
    assert alpha_cut(f, 0.7).data.all()
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            alpha_cut(f, bad)


def test_relation_params_validation():
    with pytest.raises(ValueError):
        RelationParams(crossing_decay_tau=0)
    with pytest.raises(ValueError):
        RelationParams(directional_kappa=0.5)
    with pytest.raises(ValueError):
        RelationParams(directional_method="propagate")
    with pytest.raises(RelationError):
        DirectionalOf("S", "north")
