"""Hot loops: robust local sphere fitting and trilinear interpolation.

Each kernel has a numba implementation (``*_nb``, scalar loops) and a numpy
implementation (``*_np``, vectorized over points). Both perform the same
floating-point operations in the same order, so they agree bit for bit on
IEEE-754 hardware; the test-suite checks this. Public entry points dispatch on
:func:`aaastrain._backend.get_backend`.
"""
import numpy as np

from . import rng
from ._backend import get_backend, njit

FIT_OK = 0
FIT_NO_CONSENSUS = 1
FIT_DEGENERATE = 2

# relative pivot floor for the 4x4 solves
PIVOT_TOL = 1e-12
# neighbourhood heights (in units of its extent) below this count as exactly planar
PLANAR_TOL = 1e-12
GN_MAX_ITER = 25
GN_STEP_TOL = 1e-13
# candidate spheres this far beyond r_max are not worth refining
REFINE_LIMIT = 10.0
# grid-face slack (in voxels) for points computed as o + i*s with rounding;
# such points are clamped onto the face, never extrapolated
EDGE_TOL = 1e-9


# --------------------------------------------------------------------------
# numba path


@njit
def _solve4_nb(A, b, x):
    amax = 0.0
    for r in range(4):
        for c in range(4):
            v = abs(A[r, c])
            if v > amax:
                amax = v
    tol = PIVOT_TOL * amax
    for c in range(4):
        p = c
        best = abs(A[c, c])
        for r in range(c + 1, 4):
            v = abs(A[r, c])
            if v > best:
                best = v
                p = r
        if not best > tol:
            return False
        if p != c:
            for cc in range(4):
                tmp = A[c, cc]
                A[c, cc] = A[p, cc]
                A[p, cc] = tmp
            tmp = b[c]
            b[c] = b[p]
            b[p] = tmp
        for r in range(c + 1, 4):
            f = A[r, c] / A[c, c]
            for cc in range(c, 4):
                A[r, cc] = A[r, cc] - f * A[c, cc]
            b[r] = b[r] - f * b[c]
    for r in range(3, -1, -1):
        s = b[r]
        for cc in range(r + 1, 4):
            s = s - A[r, cc] * x[cc]
        x[r] = s / A[r, r]
    return True


@njit
def _sample4_nb(seed, i, attempt, k, out, srt):
    """Four distinct positions in [0, k); ``srt`` is scratch space."""
    for j in range(4):
        u = rng.uniform_nb(seed, i, attempt * 4 + j)
        v = np.int64(np.floor(u * np.float64(k - j)))
        # shifting past the sorted earlier picks keeps draws distinct
        for t in range(j):
            if v >= srt[t]:
                v += 1
        out[j] = v
        t = j
        while t > 0 and srt[t - 1] > v:
            srt[t] = srt[t - 1]
            t -= 1
        srt[t] = v


@njit
def _fit_sphere_point_nb(Q, normal, seed, i, iterations, max_attempts, thr, min_frac, r_limit):
    """Fit one neighbourhood already centred and scaled to unit extent.

    Returns (status, unfitted, radius_in_units); ``unfitted`` means the
    neighbourhood is flat to within the model and the radius must be clamped.
    """
    k = Q.shape[0]
    hmax = 0.0
    for j in range(k):
        h = abs(Q[j, 0] * normal[0] + Q[j, 1] * normal[1] + Q[j, 2] * normal[2])
        if h > hmax:
            hmax = h
    if hmax <= PLANAR_TOL:
        return FIT_OK, True, np.inf

    A = np.empty((4, 4))
    b = np.empty(4)
    x = np.empty(4)
    picks = np.empty(4, dtype=np.int64)
    srt = np.empty(4, dtype=np.int64)
    best_count = -1
    best_cost = np.inf
    bc0 = 0.0
    bc1 = 0.0
    bc2 = 0.0
    br = 0.0
    valid = 0
    for attempt in range(max_attempts):
        if valid >= iterations:
            break
        _sample4_nb(seed, i, attempt, k, picks, srt)
        for r in range(4):
            q = Q[picks[r]]
            A[r, 0] = q[0]
            A[r, 1] = q[1]
            A[r, 2] = q[2]
            A[r, 3] = 1.0
            b[r] = -(q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
        if not _solve4_nb(A, b, x):
            continue
        c0 = -0.5 * x[0]
        c1 = -0.5 * x[1]
        c2 = -0.5 * x[2]
        r2 = c0 * c0 + c1 * c1 + c2 * c2 - x[3]
        if not r2 > 0.0:
            continue
        rad = np.sqrt(r2)
        valid += 1
        count = 0
        cost = 0.0
        for j in range(k):
            dx = Q[j, 0] - c0
            dy = Q[j, 1] - c1
            dz = Q[j, 2] - c2
            e = abs(np.sqrt(dx * dx + dy * dy + dz * dz) - rad)
            # same cap as the fitted point, which sits at the origin
            if e < thr and dx * c0 + dy * c1 + dz * c2 < 0.0:
                count += 1
                cost += e * e
        # ties on count go to the tighter fit
        if count > best_count or (count == best_count and cost < best_cost):
            best_count = count
            best_cost = cost
            bc0 = c0
            bc1 = c1
            bc2 = c2
            br = rad

    if valid == 0:
        return FIT_OK, True, np.inf
    if best_count < min_frac * k:
        return FIT_NO_CONSENSUS, False, np.nan
    if br > r_limit:
        return FIT_OK, True, np.inf

    inlier = np.zeros(k, dtype=np.bool_)
    for j in range(k):
        dx = Q[j, 0] - bc0
        dy = Q[j, 1] - bc1
        dz = Q[j, 2] - bc2
        inlier[j] = abs(np.sqrt(dx * dx + dy * dy + dz * dz) - br) < thr and dx * bc0 + dy * bc1 + dz * bc2 < 0.0
    return FIT_OK, False, _refine_nb(Q, inlier, bc0, bc1, bc2, br)


@njit
def _refine_nb(Q, inlier, c0, c1, c2, rad):
    """Gauss-Newton on sum of squared geometric distances over inliers."""
    k = Q.shape[0]
    H = np.empty((4, 4))
    g = np.empty(4)
    rhs = np.empty(4)
    step = np.empty(4)
    x0, x1, x2, xr = c0, c1, c2, rad
    for _ in range(GN_MAX_ITER):
        H[:, :] = 0.0
        rhs[:] = 0.0
        for j in range(k):
            if not inlier[j]:
                continue
            dx = Q[j, 0] - x0
            dy = Q[j, 1] - x1
            dz = Q[j, 2] - x2
            d = np.sqrt(dx * dx + dy * dy + dz * dz)
            e = d - xr
            g[0] = -dx / d
            g[1] = -dy / d
            g[2] = -dz / d
            g[3] = -1.0
            for a in range(4):
                for bb in range(4):
                    H[a, bb] = H[a, bb] + g[a] * g[bb]
                rhs[a] = rhs[a] - g[a] * e
        if not _solve4_nb(H, rhs, step):
            break
        x0 = x0 + step[0]
        x1 = x1 + step[1]
        x2 = x2 + step[2]
        xr = xr + step[3]
        sn = np.sqrt(step[0] * step[0] + step[1] * step[1] + step[2] * step[2] + step[3] * step[3])
        if sn <= GN_STEP_TOL * (1.0 + abs(xr)):
            break
    if not (np.isfinite(x0) and np.isfinite(x1) and np.isfinite(x2) and np.isfinite(xr)):
        return rad
    return abs(xr)


@njit
def _local_coords_nb(points, nbr_row, center):
    k = nbr_row.shape[0]
    Q = np.empty((k, 3))
    s = 0.0
    for j in range(k):
        p = points[nbr_row[j]]
        Q[j, 0] = p[0] - center[0]
        Q[j, 1] = p[1] - center[1]
        Q[j, 2] = p[2] - center[2]
        d = np.sqrt(Q[j, 0] * Q[j, 0] + Q[j, 1] * Q[j, 1] + Q[j, 2] * Q[j, 2])
        if d > s:
            s = d
    if s > 0.0:
        for j in range(k):
            Q[j, 0] = Q[j, 0] / s
            Q[j, 1] = Q[j, 1] / s
            Q[j, 2] = Q[j, 2] / s
    return Q, s


@njit
def sphere_radii_nb(points, centers, point_ids, nbr, normals, seed, iterations,
                    max_attempts, thr_mm, min_frac, r_max, radius, flag, status):
    for m in range(nbr.shape[0]):
        Q, s = _local_coords_nb(points, nbr[m], centers[m])
        if s == 0.0:
            status[m] = FIT_DEGENERATE
            radius[m] = np.nan
            flag[m] = False
            continue
        st, unfitted, r_units = _fit_sphere_point_nb(
            Q, normals[m], seed, point_ids[m], iterations, max_attempts, thr_mm / s, min_frac,
            REFINE_LIMIT * r_max / s)
        status[m] = st
        if st != FIT_OK:
            radius[m] = np.nan
            flag[m] = False
            continue
        if unfitted:
            radius[m] = r_max
            flag[m] = True
            continue
        r = r_units * s
        if r > r_max:
            radius[m] = r_max
            flag[m] = True
        else:
            radius[m] = r
            flag[m] = False


# --------------------------------------------------------------------------
# numpy path


def _solve4_np(A, b):
    """Batched twin of ``_solve4_nb``; returns (x, ok). Inputs are copied."""
    A = A.copy()
    b = b.copy()
    m = len(A)
    rows = np.arange(m)
    tol = PIVOT_TOL * np.abs(A).reshape(m, 16).max(axis=1)
    ok = np.ones(m, dtype=bool)
    x = np.zeros((m, 4))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for c in range(4):
            col = np.abs(A[:, c:, c])
            p = c + np.argmax(col, axis=1)
            best = col[rows, p - c]
            ok &= best > tol
            swap = p != c
            if swap.any():
                rs = rows[swap]
                tmp = A[rs, c, :].copy()
                A[rs, c, :] = A[rs, p[swap], :]
                A[rs, p[swap], :] = tmp
                tmpb = b[rs, c].copy()
                b[rs, c] = b[rs, p[swap]]
                b[rs, p[swap]] = tmpb
            for r in range(c + 1, 4):
                f = A[:, r, c] / A[:, c, c]
                A[:, r, c:] = A[:, r, c:] - f[:, None] * A[:, c, c:]
                b[:, r] = b[:, r] - f * b[:, c]
        for r in range(3, -1, -1):
            s = b[:, r]
            for cc in range(r + 1, 4):
                s = s - A[:, r, cc] * x[:, cc]
            x[:, r] = s / A[:, r, r]
    return x, ok


def _sample4_np(seed, ids, attempt, k):
    picks = np.empty((len(ids), 4), dtype=np.int64)
    for j in range(4):
        u = rng.uniform(seed, ids, attempt * 4 + j)
        v = np.floor(u * float(k - j)).astype(np.int64)
        if j:
            for s in np.sort(picks[:, :j], axis=1).T:
                v = v + (v >= s)
        picks[:, j] = v
    return picks


def _refine_np(Q, inlier, c, rad):
    m, k, _ = Q.shape
    x = np.concatenate([c, rad[:, None]], axis=1)
    active = np.ones(m, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(GN_MAX_ITER):
            idx = np.nonzero(active)[0]
            if len(idx) == 0:
                break
            xa = x[idx]
            H = np.zeros((len(idx), 4, 4))
            rhs = np.zeros((len(idx), 4))
            for j in range(k):
                w = inlier[idx, j]
                dx = Q[idx, j, 0] - xa[:, 0]
                dy = Q[idx, j, 1] - xa[:, 1]
                dz = Q[idx, j, 2] - xa[:, 2]
                d = np.sqrt(dx * dx + dy * dy + dz * dz)
                e = d - xa[:, 3]
                g = (-dx / d, -dy / d, -dz / d, np.full(len(idx), -1.0))
                for a in range(4):
                    for bb in range(4):
                        H[:, a, bb] = np.where(w, H[:, a, bb] + g[a] * g[bb], H[:, a, bb])
                    rhs[:, a] = np.where(w, rhs[:, a] - g[a] * e, rhs[:, a])
            step, ok = _solve4_np(H, rhs)
            upd = idx[ok]
            st = step[ok]
            x[upd] = x[upd] + st
            sn = np.sqrt(st[:, 0] * st[:, 0] + st[:, 1] * st[:, 1] + st[:, 2] * st[:, 2] + st[:, 3] * st[:, 3])
            done = sn <= GN_STEP_TOL * (1.0 + np.abs(x[upd, 3]))
            active[idx[~ok]] = False
            active[upd[done]] = False
    finite = np.all(np.isfinite(x), axis=1)
    return np.where(finite, np.abs(x[:, 3]), rad)


def _local_coords_np(points, nbr, centers):
    Q = points[nbr] - centers[:, None, :]
    d = np.sqrt(Q[..., 0] * Q[..., 0] + Q[..., 1] * Q[..., 1] + Q[..., 2] * Q[..., 2])
    s = d.max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = np.where(s[:, None, None] > 0.0, Q / s[:, None, None], Q)
    return Q, s


def sphere_radii_np(points, centers, point_ids, nbr, normals, seed, iterations,
                    max_attempts, thr_mm, min_frac, r_max, radius, flag, status):
    m, k = nbr.shape
    Q, s = _local_coords_np(points, nbr, centers)
    with np.errstate(divide="ignore"):
        thr = thr_mm / s
    h = np.abs(Q[..., 0] * normals[:, None, 0] + Q[..., 1] * normals[:, None, 1] + Q[..., 2] * normals[:, None, 2])
    degenerate = s == 0.0
    planar = (h.max(axis=1) <= PLANAR_TOL) & ~degenerate

    best_count = np.full(m, -1, dtype=np.int64)
    best_cost = np.full(m, np.inf)
    best = np.zeros((m, 4))
    valid = np.zeros(m, dtype=np.int64)
    todo = ~(planar | degenerate)
    with np.errstate(invalid="ignore"):
        for attempt in range(max_attempts):
            idx = np.nonzero(todo & (valid < iterations))[0]
            if len(idx) == 0:
                break
            picks = _sample4_np(seed, point_ids[idx], attempt, k)
            q = Q[idx[:, None], picks]
            A = np.empty((len(idx), 4, 4))
            A[:, :, :3] = q
            A[:, :, 3] = 1.0
            b = -(q[..., 0] * q[..., 0] + q[..., 1] * q[..., 1] + q[..., 2] * q[..., 2])
            x, ok = _solve4_np(A, b)
            c0 = -0.5 * x[:, 0]
            c1 = -0.5 * x[:, 1]
            c2 = -0.5 * x[:, 2]
            r2 = c0 * c0 + c1 * c1 + c2 * c2 - x[:, 3]
            ok &= r2 > 0.0
            idx, c0, c1, c2, r2 = idx[ok], c0[ok], c1[ok], c2[ok], r2[ok]
            rad = np.sqrt(r2)
            valid[idx] += 1
            dx = Q[idx, :, 0] - c0[:, None]
            dy = Q[idx, :, 1] - c1[:, None]
            dz = Q[idx, :, 2] - c2[:, None]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            e = np.abs(dist - rad[:, None])
            inl = (e < thr[idx, None]) & (dx * c0[:, None] + dy * c1[:, None] + dz * c2[:, None] < 0.0)
            count = inl.sum(axis=1)
            # sequential sum, matching the scalar loop
            cost = np.zeros(len(idx))
            for j in range(k):
                cost = np.where(inl[:, j], cost + e[:, j] * e[:, j], cost)
            better = (count > best_count[idx]) | ((count == best_count[idx]) & (cost < best_cost[idx]))
            bi = idx[better]
            best_count[bi] = count[better]
            best_cost[bi] = cost[better]
            best[bi] = np.stack([c0, c1, c2, rad], axis=1)[better]

    unfitted = planar | (todo & (valid == 0))
    fitted = todo & (valid > 0)
    no_consensus = fitted & (best_count < min_frac * k)
    refine = fitted & ~no_consensus & ~(best[:, 3] > REFINE_LIMIT * r_max / np.where(s > 0, s, 1.0))

    r_units = np.full(m, np.inf)
    ri = np.nonzero(refine)[0]
    if len(ri):
        Qr = Q[ri]
        bc = best[ri]
        dx = Qr[..., 0] - bc[:, None, 0]
        dy = Qr[..., 1] - bc[:, None, 1]
        dz = Qr[..., 2] - bc[:, None, 2]
        inl = (np.abs(np.sqrt(dx * dx + dy * dy + dz * dz) - bc[:, None, 3]) < thr[ri, None]) & (
            dx * bc[:, None, 0] + dy * bc[:, None, 1] + dz * bc[:, None, 2] < 0.0)
        r_units[ri] = _refine_np(Qr, inl, bc[:, :3], bc[:, 3])

    r = r_units * s
    clamp = unfitted | (fitted & ~no_consensus & ~refine) | (refine & (r > r_max))
    status[:] = FIT_OK
    status[no_consensus] = FIT_NO_CONSENSUS
    status[degenerate] = FIT_DEGENERATE
    flag[:] = clamp
    radius[:] = np.where(clamp, r_max, r)
    bad = no_consensus | degenerate
    radius[bad] = np.nan
    flag[bad] = False


def sphere_radii(points, centers, point_ids, nbr, normals, seed, iterations,
                 max_attempts, thr_mm, min_frac, r_max):
    """Robust local radius for each neighbourhood row of ``nbr``.

    ``centers`` are the points the neighbourhoods belong to; ``point_ids``
    key the random streams. Returns ``(radius, flag, status)``.
    """
    m = len(nbr)
    radius = np.empty(m)
    flag = np.empty(m, dtype=np.bool_)
    status = np.empty(m, dtype=np.int8)
    args = (
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(centers, dtype=np.float64),
        np.ascontiguousarray(point_ids, dtype=np.int64),
        np.ascontiguousarray(nbr, dtype=np.int64),
        np.ascontiguousarray(normals, dtype=np.float64),
        np.uint64(int(seed) & rng.MASK64),
        int(iterations), int(max_attempts), float(thr_mm), float(min_frac), float(r_max),
        radius, flag, status,
    )
    if get_backend() == "numba":
        sphere_radii_nb(*args)
    else:
        sphere_radii_np(*args)
    return radius, flag, status


# --------------------------------------------------------------------------
# trilinear interpolation


@njit
def trilinear_nb(data, origin, spacing, pts, out, inside):
    nx, ny, nz = data.shape[0], data.shape[1], data.shape[2]
    for m in range(pts.shape[0]):
        fx = (pts[m, 0] - origin[0]) / spacing[0]
        fy = (pts[m, 1] - origin[1]) / spacing[1]
        fz = (pts[m, 2] - origin[2]) / spacing[2]
        if not (fx >= -EDGE_TOL and fx <= nx - 1 + EDGE_TOL and fy >= -EDGE_TOL and fy <= ny - 1 + EDGE_TOL
                and fz >= -EDGE_TOL and fz <= nz - 1 + EDGE_TOL):
            inside[m] = False
            out[m, 0] = np.nan
            out[m, 1] = np.nan
            out[m, 2] = np.nan
            continue
        inside[m] = True
        fx = min(max(fx, 0.0), nx - 1.0)
        fy = min(max(fy, 0.0), ny - 1.0)
        fz = min(max(fz, 0.0), nz - 1.0)
        i = min(np.int64(np.floor(fx)), nx - 2)
        j = min(np.int64(np.floor(fy)), ny - 2)
        k = min(np.int64(np.floor(fz)), nz - 2)
        tx = fx - i
        ty = fy - j
        tz = fz - k
        for c in range(3):
            c00 = data[i, j, k, c] * (1.0 - tx) + data[i + 1, j, k, c] * tx
            c10 = data[i, j + 1, k, c] * (1.0 - tx) + data[i + 1, j + 1, k, c] * tx
            c01 = data[i, j, k + 1, c] * (1.0 - tx) + data[i + 1, j, k + 1, c] * tx
            c11 = data[i, j + 1, k + 1, c] * (1.0 - tx) + data[i + 1, j + 1, k + 1, c] * tx
            c0 = c00 * (1.0 - ty) + c10 * ty
            c1 = c01 * (1.0 - ty) + c11 * ty
            out[m, c] = c0 * (1.0 - tz) + c1 * tz


def trilinear_np(data, origin, spacing, pts, out, inside):
    n = np.array(data.shape[:3])
    f = (pts - origin) / spacing
    inside[:] = np.all((f >= -EDGE_TOL) & (f <= n - 1 + EDGE_TOL), axis=1)
    fi = np.minimum(np.maximum(f[inside], 0.0), n - 1.0)
    ijk = np.minimum(np.floor(fi).astype(np.int64), n - 2)
    t = fi - ijk
    i, j, k = ijk.T
    tx, ty, tz = (t[:, 0, None], t[:, 1, None], t[:, 2, None])
    c00 = data[i, j, k] * (1.0 - tx) + data[i + 1, j, k] * tx
    c10 = data[i, j + 1, k] * (1.0 - tx) + data[i + 1, j + 1, k] * tx
    c01 = data[i, j, k + 1] * (1.0 - tx) + data[i + 1, j, k + 1] * tx
    c11 = data[i, j + 1, k + 1] * (1.0 - tx) + data[i + 1, j + 1, k + 1] * tx
    c0 = c00 * (1.0 - ty) + c10 * ty
    c1 = c01 * (1.0 - ty) + c11 * ty
    out[:] = np.nan
    out[inside] = c0 * (1.0 - tz) + c1 * tz


def trilinear(data, origin, spacing, pts):
    """Interpolate a (nx, ny, nz, 3) voxel-centre grid at ``pts``.

    Returns ``(values, inside)``; rows outside the grid hold NaN.
    """
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    out = np.empty((len(pts), 3))
    inside = np.empty(len(pts), dtype=np.bool_)
    args = (data, np.asarray(origin, dtype=np.float64), np.asarray(spacing, dtype=np.float64), pts, out, inside)
    if get_backend() == "numba":
        trilinear_nb(*args)
    else:
        trilinear_np(*args)
    return out, inside
