"""Hot numeric kernels, each with a numba implementation and a numpy twin.

The public names at the bottom of the module dispatch on the backend chosen in
:mod:`nervequery._accel`. Both twins are importable directly so tests and the
benchmark can compare them side by side.

Floating point evaluation order is kept identical between the twins (and
matches the brute-force definitions used in the tests) so results agree
bit-for-bit wherever the algorithms are exact.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

INF = np.inf

# ---------------------------------------------------------------------------
# squared Euclidean distance, one axis pass (lower envelope of parabolas)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _envelope_line(f, s, out, v, z):
    n = f.shape[0]
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == INF:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INF
            z[1] = INF
            continue
        while True:
            p = v[k]
            qs = q * s
            ps = p * s
            x = ((fq + qs * qs) - (f[p] + ps * ps)) / (2.0 * (qs - ps))
            if x <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INF
            z[1] = INF
        else:
            k += 1
            v[k] = q
            z[k] = x
            z[k + 1] = INF
    if k < 0:
        for q in range(n):
            out[q] = INF
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q * s:
            k += 1
        d = (q - v[k]) * s
        out[q] = d * d + f[v[k]]


@njit(parallel=True, cache=True)
def edt_pass_numba(lines, s):
    """Envelope pass over every row of a 2-D ``(n_lines, n)`` array."""
    n_lines, n = lines.shape
    out = np.empty_like(lines)
    for li in prange(n_lines):
        v = np.empty(n, dtype=np.int64)
        z = np.empty(n + 1, dtype=np.float64)
        _envelope_line(lines[li], s, out[li], v, z)
    return out


def edt_pass_numpy(lines, s, chunk_elems=1 << 22):
    n_lines, n = lines.shape
    out = np.empty_like(lines)
    idx = np.arange(n)
    d = (idx[:, None] - idx[None, :]) * s
    d2 = d * d  # d2[q, j]
    step = max(1, chunk_elems // max(1, n * n))
    for a in range(0, n_lines, step):
        f = lines[a : a + step]
        out[a : a + step] = (d2[None, :, :] + f[:, None, :]).min(axis=2)
    return out


# ---------------------------------------------------------------------------
# directional fuzzy dilation: best cosine to a direction over reference points
# ---------------------------------------------------------------------------


@njit(parallel=True, cache=True)
def directional_cos_numba(dims, affine, inside, refs, u, max_dist):
    nx, ny, nz = dims[0], dims[1], dims[2]
    out = np.full((nx, ny, nz), -2.0)
    m = refs.shape[0]
    lim2 = max_dist * max_dist
    ux, uy, uz = u[0], u[1], u[2]
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                if inside[i, j, k]:
                    out[i, j, k] = 1.0
                    continue
                wx = affine[0, 0] * i + affine[0, 1] * j + affine[0, 2] * k + affine[0, 3]
                wy = affine[1, 0] * i + affine[1, 1] * j + affine[1, 2] * k + affine[1, 3]
                wz = affine[2, 0] * i + affine[2, 1] * j + affine[2, 2] * k + affine[2, 3]
                best = -2.0
                for r in range(m):
                    dx = wx - refs[r, 0]
                    dy = wy - refs[r, 1]
                    dz = wz - refs[r, 2]
                    n2 = dx * dx + dy * dy + dz * dz
                    if n2 > lim2 or n2 == 0.0:
                        continue
                    c = (dx * ux + dy * uy + dz * uz) / np.sqrt(n2)
                    if c > best:
                        best = c
                out[i, j, k] = best
    return out


def directional_cos_numpy(dims, affine, inside, refs, u, max_dist, chunk_elems=1 << 22):
    nx, ny, nz = (int(d) for d in dims)
    total = nx * ny * nz
    out = np.full(total, -2.0)
    flat_inside = inside.reshape(-1)
    m = refs.shape[0]
    lim2 = max_dist * max_dist
    step = max(1, chunk_elems // max(1, m))
    for a in range(0, total, step):
        lin = np.arange(a, min(total, a + step))
        lin = lin[~flat_inside[lin]]
        if lin.size == 0 or m == 0:
            continue
        i, j, k = np.unravel_index(lin, (nx, ny, nz))
        w = [affine[r, 0] * i + affine[r, 1] * j + affine[r, 2] * k + affine[r, 3] for r in range(3)]
        dx = w[0][:, None] - refs[None, :, 0]
        dy = w[1][:, None] - refs[None, :, 1]
        dz = w[2][:, None] - refs[None, :, 2]
        n2 = dx * dx + dy * dy + dz * dz
        valid = (n2 <= lim2) & (n2 != 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = (dx * u[0] + dy * u[1] + dz * u[2]) / np.sqrt(n2)
        c = np.where(valid, c, -2.0)
        out[lin] = c.max(axis=1)
    out = out.reshape(nx, ny, nz)
    out[inside] = 1.0
    return out


@njit(parallel=True, cache=True)
def directional_sliced_numba(plane_d2, step):
    """Best cosine along a voxel axis from per-plane squared distances.

    ``plane_d2[j, a, b]`` is the squared in-plane distance (mm²) from ``(a, b)``
    to the structure's voxels in plane ``j``; ``step`` is the signed world
    length of one voxel step along the direction.
    """
    n, na, nb = plane_d2.shape
    out = np.full((n, na, nb), -2.0)
    for i in prange(n):
        for j in range(n):
            dy = (i - j) * step
            if dy <= 0.0:
                continue
            dy2 = dy * dy
            for a in range(na):
                for b in range(nb):
                    r2 = plane_d2[j, a, b]
                    if r2 == INF:
                        continue
                    c = dy / np.sqrt(dy2 + r2)
                    if c > out[i, a, b]:
                        out[i, a, b] = c
    return out


def directional_sliced_numpy(plane_d2, step):
    n = plane_d2.shape[0]
    out = np.full(plane_d2.shape, -2.0)
    idx = np.arange(n)
    for j in range(n):
        r2 = plane_d2[j]
        if not np.isfinite(r2).any():
            continue
        dy = (idx - j) * step
        rows = dy > 0.0
        if not rows.any():
            continue
        d = dy[rows][:, None, None]
        with np.errstate(invalid="ignore"):
            c = d / np.sqrt(d * d + r2[None])
        c = np.where(np.isfinite(r2)[None], c, -2.0)
        out[rows] = np.maximum(out[rows], c)
    return out


# ---------------------------------------------------------------------------
# trilinear sampling at continuous voxel coordinates
# ---------------------------------------------------------------------------

_EDGE_EPS = 1e-9


@njit(parallel=True, cache=True)
def sample_trilinear_numba(data, coords):
    n = coords.shape[0]
    nx, ny, nz = data.shape
    out = np.zeros(n)
    for p in prange(n):
        x = coords[p, 0]
        y = coords[p, 1]
        z = coords[p, 2]
        if (x < -_EDGE_EPS or y < -_EDGE_EPS or z < -_EDGE_EPS
                or x > nx - 1 + _EDGE_EPS or y > ny - 1 + _EDGE_EPS or z > nz - 1 + _EDGE_EPS):
            continue
        x = min(max(x, 0.0), nx - 1.0)
        y = min(max(y, 0.0), ny - 1.0)
        z = min(max(z, 0.0), nz - 1.0)
        i0 = min(int(np.floor(x)), max(nx - 2, 0))
        j0 = min(int(np.floor(y)), max(ny - 2, 0))
        k0 = min(int(np.floor(z)), max(nz - 2, 0))
        i1 = min(i0 + 1, nx - 1)
        j1 = min(j0 + 1, ny - 1)
        k1 = min(k0 + 1, nz - 1)
        tx = x - i0
        ty = y - j0
        tz = z - k0
        c00 = data[i0, j0, k0] * (1.0 - tx) + data[i1, j0, k0] * tx
        c10 = data[i0, j1, k0] * (1.0 - tx) + data[i1, j1, k0] * tx
        c01 = data[i0, j0, k1] * (1.0 - tx) + data[i1, j0, k1] * tx
        c11 = data[i0, j1, k1] * (1.0 - tx) + data[i1, j1, k1] * tx
        c0 = c00 * (1.0 - ty) + c10 * ty
        c1 = c01 * (1.0 - ty) + c11 * ty
        out[p] = c0 * (1.0 - tz) + c1 * tz
    return out


def sample_trilinear_numpy(data, coords):
    nx, ny, nz = data.shape
    out = np.zeros(coords.shape[0])
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    ok = ((x >= -_EDGE_EPS) & (y >= -_EDGE_EPS) & (z >= -_EDGE_EPS)
          & (x <= nx - 1 + _EDGE_EPS) & (y <= ny - 1 + _EDGE_EPS) & (z <= nz - 1 + _EDGE_EPS))
    x = np.clip(x[ok], 0.0, nx - 1.0)
    y = np.clip(y[ok], 0.0, ny - 1.0)
    z = np.clip(z[ok], 0.0, nz - 1.0)
    i0 = np.minimum(np.floor(x).astype(np.int64), max(nx - 2, 0))
    j0 = np.minimum(np.floor(y).astype(np.int64), max(ny - 2, 0))
    k0 = np.minimum(np.floor(z).astype(np.int64), max(nz - 2, 0))
    i1 = np.minimum(i0 + 1, nx - 1)
    j1 = np.minimum(j0 + 1, ny - 1)
    k1 = np.minimum(k0 + 1, nz - 1)
    tx = x - i0
    ty = y - j0
    tz = z - k0
    c00 = data[i0, j0, k0] * (1.0 - tx) + data[i1, j0, k0] * tx
    c10 = data[i0, j1, k0] * (1.0 - tx) + data[i1, j1, k0] * tx
    c01 = data[i0, j0, k1] * (1.0 - tx) + data[i1, j0, k1] * tx
    c11 = data[i0, j1, k1] * (1.0 - tx) + data[i1, j1, k1] * tx
    c0 = c00 * (1.0 - ty) + c10 * ty
    c1 = c01 * (1.0 - ty) + c11 * ty
    out[ok] = c0 * (1.0 - tz) + c1 * tz
    return out


# ---------------------------------------------------------------------------
# THEN partition: max-min margin over monotone windowings of a fiber
# ---------------------------------------------------------------------------


@njit(cache=True)
def _partition_one(values, tau, min_pts, bounds, scores):
    """values: (K, P) per-point stage degrees. Fills bounds (K+1,), scores (K,)."""
    K, P = values.shape
    suf = np.full((K + 1, P + 1), -INF)
    suf[K, P] = INF
    for k in range(K - 1, -1, -1):
        for s in range(P):
            acc = 0.0
            cnt = 0
            bestv = -INF
            for e in range(s + 1, P + 1):
                v = values[k, e - 1]
                if v > 0.0:
                    acc += v
                    cnt += 1
                if e - s < min_pts or suf[k + 1, e] == -INF:
                    continue
                sc = acc / cnt if cnt > 0 else 0.0
                val = min(sc - tau[k], suf[k + 1, e])
                if val > bestv:
                    bestv = val
            suf[k, s] = bestv
    opt = suf[0, 0]
    for k in range(K + 1):
        bounds[k] = -1
    for k in range(K):
        scores[k] = 0.0
    if opt == -INF:
        return opt
    b = 0
    bounds[0] = 0
    for k in range(K):
        acc = 0.0
        cnt = 0
        for e in range(b + 1, P + 1):
            v = values[k, e - 1]
            if v > 0.0:
                acc += v
                cnt += 1
            if e - b < min_pts or suf[k + 1, e] < opt:
                continue
            sc = acc / cnt if cnt > 0 else 0.0
            if sc - tau[k] >= opt:
                scores[k] = sc
                bounds[k + 1] = e
                b = e
                break
    return opt


@njit(parallel=True, cache=True)
def partition_batch_numba(values, offsets, tau, min_pts):
    """values: (K, total) concatenated fibers; offsets: (F+1,) fiber starts."""
    K = values.shape[0]
    F = offsets.shape[0] - 1
    opt = np.full(F, -INF)
    bounds = np.full((F, K + 1), -1, dtype=np.int64)
    scores = np.zeros((F, K))
    for f in prange(F):
        a = offsets[f]
        b = offsets[f + 1]
        vals = np.ascontiguousarray(values[:, a:b])
        opt[f] = _partition_one(vals, tau, min_pts, bounds[f], scores[f])
    return opt, bounds, scores


def _window_scores_numpy(row):
    """score[s, e] for window [s, e) (e exclusive), sequential accumulation."""
    P = row.shape[0]
    pos = np.where(row > 0.0, row, 0.0)
    tri = np.triu(np.ones((P, P), dtype=bool))
    sums = np.cumsum(np.where(tri, pos[None, :], 0.0), axis=1)
    cnts = np.cumsum(tri & (row > 0.0)[None, :], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sc = np.where(cnts > 0, sums / np.maximum(cnts, 1), 0.0)
    full = np.zeros((P + 1, P + 1))
    full[:P, 1:] = sc
    return full


def _partition_one_numpy(values, tau, min_pts):
    K, P = values.shape
    bounds = np.full(K + 1, -1, dtype=np.int64)
    scores = np.zeros(K)
    suf = np.full((K + 1, P + 1), -INF)
    suf[K, P] = INF
    s_idx = np.arange(P + 1)
    allowed = (s_idx[None, :] - s_idx[:, None]) >= min_pts  # [s, e]
    tables = []
    for k in range(K - 1, -1, -1):
        sc = _window_scores_numpy(values[k])
        tables.append(sc)
        cand = np.minimum(sc - tau[k], suf[k + 1][None, :])
        cand = np.where(allowed & (suf[k + 1][None, :] > -INF), cand, -INF)
        suf[k] = cand.max(axis=1)
        suf[k, P] = -INF
    tables.reverse()
    opt = suf[0, 0]
    if opt == -INF:
        return opt, bounds, scores
    b = 0
    bounds[0] = 0
    for k in range(K):
        sc = tables[k][b]
        e = np.arange(P + 1)
        ok = (e - b >= min_pts) & (suf[k + 1] >= opt) & (sc - tau[k] >= opt)
        e_sel = int(np.argmax(ok))
        scores[k] = sc[e_sel]
        bounds[k + 1] = e_sel
        b = e_sel
    return opt, bounds, scores


def partition_batch_numpy(values, offsets, tau, min_pts):
    K = values.shape[0]
    F = offsets.shape[0] - 1
    opt = np.full(F, -INF)
    bounds = np.full((F, K + 1), -1, dtype=np.int64)
    scores = np.zeros((F, K))
    for f in range(F):
        a, b = offsets[f], offsets[f + 1]
        opt[f], bounds[f], scores[f] = _partition_one_numpy(values[:, a:b], tau, min_pts)
    return opt, bounds, scores


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    edt_pass = edt_pass_numba
    directional_cos = directional_cos_numba
    directional_sliced = directional_sliced_numba
    sample_trilinear_coords = sample_trilinear_numba
    partition_batch = partition_batch_numba
else:
    edt_pass = edt_pass_numpy
    directional_cos = directional_cos_numpy
    directional_sliced = directional_sliced_numpy
    sample_trilinear_coords = sample_trilinear_numpy
    partition_batch = partition_batch_numpy

NUMBA_KERNELS = {
    "edt_pass": edt_pass_numba,
    "directional_cos": directional_cos_numba,
    "directional_sliced": directional_sliced_numba,
    "sample_trilinear": sample_trilinear_numba,
    "partition_batch": partition_batch_numba,
}
NUMPY_KERNELS = {
    "edt_pass": edt_pass_numpy,
    "directional_cos": directional_cos_numpy,
    "directional_sliced": directional_sliced_numpy,
    "sample_trilinear": sample_trilinear_numpy,
    "partition_batch": partition_batch_numpy,
}
