from dataclasses import replace

import numpy as np
import pytest

from nervequery import _kernels
from nervequery.binding import bind
from nervequery.engine import (
    EngineConfig, evaluate_fiber, evaluate_fibers, filter_tractogram, mean_positive, stage_score,
    stage_values, write_verdicts,
)
from nervequery.query import parse
from nervequery.relations import crossing_landscape
from nervequery.tracts import Tractogram
from nervequery.volume import sample_trilinear

from conftest import exhaustive_partition, label_volume


@pytest.fixture
def two_cubes():
    """A at x in [2, 4), B at x in [10, 12), on a 1 mm grid."""
    return label_volume((14, 6, 6), {"A": (2, 2, 2, 4, 4, 4), "B": (10, 2, 2, 12, 4, 4)})


def line(x0, x1, n, y=2.5, z=2.5):
    return np.stack([np.linspace(x0, x1, n), np.full(n, y), np.full(n, z)], axis=1)


def test_mean_of_nonzero_values():
    assert mean_positive([0, 0, 0.6, 0.6]) == pytest.approx(0.6)
    assert mean_positive([0, 0]) == 0.0
    assert mean_positive([]) == 0.0


def test_stage_score_examples(two_cubes):
    bq = bind(parse("N = crossing(A) then not crossing(B)"), two_cubes)
    inside = line(2.0, 3.0, 5)
    assert stage_score(inside, bq.stages[0], bq) == 1.0
    far = line(2.0, 5.0, 4)
    assert stage_score(far, bq.stages[1], bq) == 1.0


def test_single_stage_accept_and_reject(two_cubes):
    bq = bind(parse("N = crossing(A)"), two_cubes)
    v = evaluate_fiber(line(2.0, 3.0, 6), bq)
    assert v.accepted and v.stage_scores == (1.0,) and v.segmentation == ((0, 6),)
    v = evaluate_fiber(line(7.0, 8.0, 6), bq)
    assert not v.accepted and v.stage_scores == (0.0,)


def test_orientation_modes(two_cubes):
    bq = bind(parse("N = crossing(A) then crossing(B)"), two_cubes)
    fiber = line(11.0, 2.0, 10)  # passes B first, then A
    v = evaluate_fiber(fiber, bq)
    assert v.accepted and v.orientation_used == "reversed"
    v = evaluate_fiber(fiber, bq, EngineConfig(orientation_mode="forward"))
    assert not v.accepted
    v = evaluate_fiber(fiber[::-1], bq, EngineConfig(orientation_mode="forward"))
    assert v.accepted and v.orientation_used == "forward"


def test_too_short_fiber(two_cubes):
    bq = bind(parse("N = crossing(A) then crossing(B) then crossing(A)"), two_cubes)
    v = evaluate_fiber(line(2.0, 3.0, 5), bq)
    assert not v.accepted and v.reason == "too short" and v.margin == -np.inf


def test_empty_tractogram_and_duplicates(two_cubes, tmp_path):
    bq = bind(parse("N = crossing(A)"), two_cubes)
    rep = filter_tractogram(Tractogram([]), bq)
    assert (rep.n_input, rep.n_accepted, rep.n_rejected) == (0, 0, 0)
    good, bad = line(2.0, 3.0, 4), line(7.0, 8.0, 4)
    rep = filter_tractogram(Tractogram([good, bad, good]), bq)
    assert rep.accepted_indices == (0, 2)
    assert rep.n_accepted + rep.n_rejected == rep.n_input == 3
    assert rep.labelmap.count() > 0
    write_verdicts(rep, tmp_path / "v.tsv")
    rows = (tmp_path / "v.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["fiber", "accepted", "orientation", "margin", "stage1", "reason"]
    assert rows[1].split("\t")[:2] == ["0", "1"] and rows[2].split("\t")[:2] == ["1", "0"]


def test_verdict_invariants(two_cubes, rng):
    bq = bind(parse("N = crossing(A) then anterior_of(B) or crossing(B)"), two_cubes)
    fibers = [rng.uniform([0, 0, 0], [13, 5, 5], size=(int(rng.integers(2, 15)), 3)) for _ in range(200)]
    for f, v in zip(fibers, evaluate_fibers(fibers, bq)):
        if v.accepted:
            assert all(s >= t for s, t in zip(v.stage_scores, bq.thresholds))
            assert v.segmentation[0][0] == 0 and v.segmentation[-1][1] == len(f)
            for (a, b), (c, d) in zip(v.segmentation, v.segmentation[1:]):
                assert b == c and b - a >= 2


# --- the DP against exhaustive enumeration ----------------------------------------


def random_case(rng):
    K = int(rng.integers(1, 4))
    P = int(rng.integers(1, 13))
    vals = rng.random((K, P))
    vals[rng.random((K, P)) < 0.35] = 0.0
    if rng.random() < 0.3:
        vals = np.round(vals * 4) / 4  # force ties
    tau = rng.choice([0.25, 0.5, 0.75], K)
    return vals, tau, int(rng.integers(1, 4))


@pytest.mark.parametrize("kernels", ["numba", "numpy"])
def test_partition_matches_exhaustive_enumeration(kernels):
    part = (_kernels.NUMBA_KERNELS if kernels == "numba" else _kernels.NUMPY_KERNELS)["partition_batch"]
    rng = np.random.default_rng(77)
    for _ in range(300):
        vals, tau, m = random_case(rng)
        opt, bounds, scores = part(np.ascontiguousarray(vals), np.array([0, vals.shape[1]]), tau, m)
        best, best_b = exhaustive_partition(vals.tolist(), tau.tolist(), m)
        if best_b is None:
            assert opt[0] == -np.inf
            continue
        assert abs(opt[0] - best) <= 1e-9
        assert tuple(bounds[0]) == best_b


def test_partition_batch_handles_many_fibers(rng):
    cases = [random_case(np.random.default_rng(i)) for i in range(40)]
    cases = [c for c in cases if c[0].shape[0] == 2]
    vals = np.ascontiguousarray(np.concatenate([c[0] for c in cases], axis=1))
    offsets = np.concatenate([[0], np.cumsum([c[0].shape[1] for c in cases])])
    tau = np.array([0.5, 0.5])
    opt, bounds, _ = _kernels.partition_batch(vals, offsets, tau, 1)
    for f, c in enumerate(cases):
        best, b = exhaustive_partition(c[0].tolist(), [0.5, 0.5], 1)
        assert (opt[f] == -np.inf and b is None) or abs(opt[f] - best) <= 1e-9


# --- properties --------------------------------------------------------------------


def _random_fiber(rng, hi):
    n = int(rng.integers(2, 13))
    return rng.uniform([0, 0, 0], hi, size=(n, 3))


def test_orientation_symmetry(two_cubes, rng):
    bq = bind(parse("N = crossing(A) then not crossing(B) then crossing(B)"), two_cubes)
    for _ in range(200):
        f = _random_fiber(rng, [13, 5, 5])
        assert evaluate_fiber(f, bq).accepted == evaluate_fiber(f[::-1], bq).accepted


def test_threshold_monotonicity(two_cubes, rng):
    bq = bind(parse("N = crossing(A) or anterior_of(B) then not crossing(B)"), two_cubes)
    for _ in range(200):
        f = _random_fiber(rng, [13, 5, 5])
        t = tuple(rng.uniform(0.05, 1.0, 2))
        hi = tuple(min(1.0, x + rng.uniform(0, 0.5)) for x in t)
        lo_v = evaluate_fiber(f, replace(bq, thresholds=t))
        hi_v = evaluate_fiber(f, replace(bq, thresholds=hi))
        assert not (hi_v.accepted and not lo_v.accepted)


def test_stage_values_follow_the_expression(two_cubes):
    bq = bind(parse("N = not crossing(A)"), two_cubes)
    pts = line(0.0, 3.0, 4)
    vals = stage_values(pts, bq.stages[0], bq)
    ca = sample_trilinear(crossing_landscape(two_cubes, "A"), pts)
    assert np.allclose(vals, 1.0 - ca)
    assert vals[0] > vals[1] > vals[2] == vals[3] == 0.0


def test_engine_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(default_threshold=0.0)
    with pytest.raises(ValueError):
        EngineConfig(min_points_per_stage=0)
    with pytest.raises(ValueError):
        EngineConfig(orientation_mode="backward")
