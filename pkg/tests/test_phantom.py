from dataclasses import replace

import numpy as np
import pytest

from nervequery.binding import bind
from nervequery.config import ConfigError
from nervequery.engine import evaluate_fibers
from nervequery.phantom import PhantomSpec, StructureSpec, generate, parse_spec, preset
from nervequery.query import parse


def segment_hits_box(a, b, lo, hi) -> bool:
    """Slab test: does the closed segment a-b meet the axis-aligned box [lo, hi]?"""
    t0, t1 = 0.0, 1.0
    for d in range(3):
        da = b[d] - a[d]
        if da == 0.0:
            if a[d] < lo[d] or a[d] > hi[d]:
                return False
            continue
        u, v = (lo[d] - a[d]) / da, (hi[d] - a[d]) / da
        t0, t1 = max(t0, min(u, v)), min(t1, max(u, v))
        if t0 > t1:
            return False
    return True


def polyline_hits_box(poly, lo, hi) -> bool:
    return any(segment_hits_box(p, q, lo, hi) for p, q in zip(poly[:-1], poly[1:]))


def box_of(spec, name):
    s = next(s for s in spec.structures if s.name == name)
    return np.array(s.params[:3]), np.array(s.params[3:])


@pytest.fixture(scope="module")
def toy():
    spec = preset("lumbosacral-toy")
    return spec, generate(spec)


def test_same_seed_is_bit_identical(toy):
    spec, a = toy
    b = generate(spec)
    assert np.array_equal(a.volume.data, b.volume.data)
    assert np.array_equal(a.is_true, b.is_true)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.tractogram.streamlines, b.tractogram.streamlines))
    c = generate(replace(spec, seed=spec.seed + 1))
    assert any(x.shape != y.shape or x.tobytes() != y.tobytes()
               for x, y in zip(a.tractogram.streamlines, c.tractogram.streamlines))


def test_preset_counts_and_labels(toy):
    spec, ph = toy
    assert len(ph.tractogram) == 200 and int(ph.is_true.sum()) == 100
    assert sorted(ph.volume.label_names.values()) == ["ForamenLower", "ForamenUpper", "Muscle", "Sacrum"]
    assert not ph.volume.empty_labels


def test_zero_fibers_gives_labelmap_only():
    spec = replace(preset("lumbosacral-toy"), true_count=0, spurious_count=0)
    ph = generate(spec)
    assert len(ph.tractogram) == 0 and ph.is_true.size == 0
    assert ph.volume.data.any()


def test_overlapping_structures_rejected():
    spec = PhantomSpec((10, 10, 10), structures=(
        StructureSpec("A", 1, "box", (0, 0, 0, 4, 4, 4)),
        StructureSpec("B", 2, "sphere", (4, 4, 4, 2)),
    ))
    with pytest.raises(ValueError, match="overlap"):
        generate(spec)


def test_every_true_fiber_crosses_both_foramina(toy):
    spec, ph = toy
    up, low = box_of(spec, "ForamenUpper"), box_of(spec, "ForamenLower")
    for f in ph.true_bundle:
        f = f.astype(np.float64)
        assert polyline_hits_box(f, *up) and polyline_hits_box(f, *low)


def test_unjittered_truth_scores_high():
    spec = preset("lumbosacral-toy", jitter=0.0)
    ph = generate(spec)
    bq = bind(parse("T = " + spec.query), ph.volume)
    for v in evaluate_fibers(ph.true_bundle, bq):
        assert v.accepted and min(v.stage_scores) >= 0.9


def test_jittered_truth_mostly_accepted(toy):
    spec, ph = toy
    bq = bind(parse("T = " + spec.query), ph.volume)
    acc = np.array([v.accepted for v in evaluate_fibers(ph.true_bundle, bq)])
    assert acc.mean() >= 0.95


def test_wrong_paths_each_break_a_clause():
    spec = replace(preset("lumbosacral-toy", jitter=0.0), true_count=0, spurious_count=3, spurious_mode="wrong-path")
    ph = generate(spec)
    bq = bind(parse("T = " + spec.query), ph.volume)
    assert not any(v.accepted for v in evaluate_fibers(ph.tractogram.streamlines, bq))


def test_random_walks_stay_on_the_grid():
    spec = replace(preset("lumbosacral-toy"), true_count=0, spurious_count=30, spurious_mode="random-walk")
    ph = generate(spec)
    lo = np.array(spec.origin)
    hi = lo + (np.array(spec.dims) - 1) * np.array(spec.spacing)
    for f in ph.tractogram.streamlines:
        assert len(f) >= 3 and np.all(f >= lo - 1e-4) and np.all(f <= hi + 1e-4)


def test_shapes_rasterize_by_voxel_centre():
    spec = PhantomSpec((9, 9, 9), origin=(-4.0, -4.0, -4.0), structures=(
        StructureSpec("S", 1, "sphere", (0, 0, 0, 1.0)),
        StructureSpec("T", 2, "tube", (3, -4, -4, 3, 4, -4, 0.5)),
    ))
    vol = generate(spec).volume
    assert int((vol.data == 1).sum()) == 7  # centre plus six face neighbours
    assert int((vol.data == 2).sum()) == 9


@pytest.mark.parametrize("text, fragment", [
    ("spacing = 1 1 1\n", "dims"),
    ("dims = 4 4 4\nstructure.A = 1 cone 0 0 0 1\n", "unknown shape"),
    ("dims = 4 4 4\nstructure.A = 1 box 0 0 0\n", "takes 6"),
    ("dims = 4 4 4\nstructure.A = 1 box 0 0 0 1 1 1\nstructure.B = 1 box 2 2 2 3 3 3\n", "unique"),
    ("dims = 4 4 4\ntrue.count = 5\ntrue.path = 0 0 0\n", "two waypoints"),
    ("dims = 4 4 4\nspurious.count = 5\n", "spurious.path"),
    ("dims = 4 4 4\ncolour = red\n", "unknown phantom key"),
])
def test_spec_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_spec(text)
