import numpy as np
import pytest

from nervequery.volume import Grid, LabelVolume

S2_LEFT = """\
S2_left = crossing(SacralHoleS2Left) then anterior_of(PiriformisMuscleLeft)
    then left_of(LevatorAniMuscles) then not posterior_of(Sacrum)
    then not (crossing(SacralHoleS1Left) or crossing(SacralHoleS3Left))
    then not left_of(PiriformisMuscleLeft)
    then not anterior_of(ObturatorMuscleLeft)
    then not between(ObturatorMuscleLeft, ObturatorMuscleRight)
"""

S2_STRUCTURES = (
    "SacralHoleS2Left", "PiriformisMuscleLeft", "LevatorAniMuscles", "Sacrum",
    "SacralHoleS1Left", "SacralHoleS3Left", "ObturatorMuscleLeft", "ObturatorMuscleRight",
)


def label_volume(dims, boxes, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), affine=None):
    """``boxes`` maps name -> (i0, j0, k0, i1, j1, k1) voxel ranges (end exclusive)."""
    grid = Grid(dims, affine) if affine is not None else Grid.from_spacing(dims, spacing, origin)
    data = np.zeros(dims, dtype=np.int16)
    names = {}
    for lid, (name, b) in enumerate(boxes.items(), 1):
        data[b[0]:b[3], b[1]:b[4], b[2]:b[5]] = lid
        names[lid] = name
    return LabelVolume(grid, data, names)


def random_mask(rng, dims, n_boxes=3, max_side=4):
    m = np.zeros(dims, dtype=bool)
    d = np.array(dims)
    for _ in range(n_boxes):
        lo = rng.integers(0, d - 1)
        hi = np.minimum(d, lo + rng.integers(1, max_side + 1, 3))
        m[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def s2_volume():
    """Synthetic 8-structure label map providing every name of the clinical S2 query."""
    boxes = {name: (2 + 3 * (i % 4), 2 + 5 * (i // 4), 3 + 2 * i, 4 + 3 * (i % 4), 5 + 5 * (i // 4), 5 + 2 * i)
             for i, name in enumerate(S2_STRUCTURES)}
    return label_volume((16, 14, 22), boxes, spacing=(1.5, 1.5, 2.0))


# --- brute-force oracles, written straight from the definitions ---------------


def brute_sq_edt(mask, spacing):
    """O(N*M) squared distances; component sum in x, y, z order like the separable passes."""
    idx = np.indices(mask.shape).reshape(3, -1).T.astype(np.float64)
    pts = np.argwhere(mask).astype(np.float64)
    out = np.full(idx.shape[0], np.inf)
    if len(pts):
        d = [((idx[:, None, a] - pts[None, :, a]) * spacing[a]) ** 2 for a in range(3)]
        out = ((d[0] + d[1]) + d[2]).min(axis=1)
    return out.reshape(mask.shape)


def oracle_crossing(grid, mask, tau):
    d = np.sqrt(brute_sq_edt(mask, grid.spacing))
    return np.maximum(0.0, 1.0 - d / tau)


def oracle_directional(grid, mask, u, kappa=1.0, max_dist=np.inf):
    """max over every structure voxel p of (1 - 2*angle(x - p, u)/pi)^kappa, 1 inside."""
    u = np.asarray(u, float) / np.linalg.norm(u)
    x = grid.voxel_centers()
    p = grid.voxel_centers(mask)
    d = x[:, None, :] - p[None, :, :]
    n = np.linalg.norm(d, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ang = np.arccos(np.clip((d @ u) / n, -1, 1))
    deg = np.maximum(0.0, 1.0 - 2.0 * ang / np.pi) ** kappa
    deg[(n == 0) | (n > max_dist)] = 0.0
    out = deg.max(axis=1).reshape(grid.dims)
    out[mask] = 1.0
    return out


def oracle_between(grid, ma, mb, kappa=1.0, limit=100.0):
    axis = grid.voxel_centers(mb).mean(0) - grid.voxel_centers(ma).mean(0)
    da = oracle_directional(grid, ma, axis, kappa, limit)
    db = oracle_directional(grid, mb, -axis, kappa, limit)
    out = np.minimum(da, db)
    out[ma | mb] = 0.0
    return out


def random_two_structures(rng, dims):
    """Label volume with non-overlapping structures A and B (B drawn where A is not)."""
    ma = random_mask(rng, dims, n_boxes=int(rng.integers(1, 3)))
    mb = random_mask(rng, dims, n_boxes=int(rng.integers(1, 3))) & ~ma
    if not mb.any():
        free = np.argwhere(~ma)[0]
        mb[tuple(free)] = True
    data = np.zeros(dims, np.int16)
    data[ma] = 1
    data[mb] = 2
    return data


def mean_of_positive(vals):
    pos = [v for v in vals if v > 0.0]
    total = 0.0
    for v in pos:
        total += v
    return total / len(pos) if pos else 0.0


def exhaustive_partition(values, tau, min_pts):
    """Enumerate every cut of the points into K windows; return (best margin, bounds).

    Best means the largest minimum of ``score_k - tau_k``; ties go to the
    lexicographically smallest boundary tuple. (-inf, None) when no cut exists.
    """
    from itertools import combinations

    K, P = len(values), len(values[0])
    best, best_b = -np.inf, None
    for cuts in combinations(range(1, P), K - 1):
        b = (0, *cuts, P)
        if any(b[k + 1] - b[k] < min_pts for k in range(K)):
            continue
        m = min(mean_of_positive(values[k][b[k]:b[k + 1]]) - tau[k] for k in range(K))
        if m > best:
            best, best_b = m, b
    return best, best_b
