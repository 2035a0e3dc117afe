"""Per-point wall frames: plane-fit normals, outward orientation, robust radius."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree

from . import kernels, rng
from .errors import FrameError, StrainError
from .geometry import build_index, centroid, k_nearest_many

DEGENERATE_TOL_MM = 1e-9
# dot products this small leave the outward sense undecided
_ORIENT_TOL = 1e-12


@dataclass(frozen=True)
class SurfaceFitParams:
    k_neighbors: int = 30
    mlesac_iterations: int = 200
    inlier_threshold_mm: float = 0.3
    min_inlier_fraction: float = 0.5
    r_max_mm: float = 300.0
    rng_seed: int = 0
    # singular samples are redrawn, up to this many draws per model kept
    max_attempts_factor: int = 5

    def __post_init__(self):
        if self.k_neighbors < 6:
            raise StrainError("k_neighbors must be >= 6")
        if self.mlesac_iterations < 1:
            raise StrainError("mlesac_iterations must be >= 1")
        if not self.inlier_threshold_mm > 0 or not self.r_max_mm > 0:
            raise StrainError("thresholds must be positive")
        if not 0 < self.min_inlier_fraction <= 1:
            raise StrainError("min_inlier_fraction must lie in (0, 1]")

    @property
    def max_attempts(self):
        return self.mlesac_iterations * self.max_attempts_factor


@dataclass(frozen=True)
class LocalSurfaceFrame:
    normal: np.ndarray
    tangent1: np.ndarray
    tangent2: np.ndarray
    radius_mm: float
    low_curvature_flag: bool


@dataclass(frozen=True, eq=False)
class SurfaceFrames:
    """Frames for a whole cloud, stored column-wise.

    Indexing yields a :class:`LocalSurfaceFrame` for one point.
    """

    normals: np.ndarray
    tangent1: np.ndarray
    tangent2: np.ndarray
    radius_mm: np.ndarray
    low_curvature: np.ndarray

    def __len__(self):
        return len(self.normals)

    def __getitem__(self, i):
        return LocalSurfaceFrame(
            self.normals[i], self.tangent1[i], self.tangent2[i],
            float(self.radius_mm[i]), bool(self.low_curvature[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def equal(self, other):
        """Bit-for-bit equality of every array."""
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("normals", "tangent1", "tangent2", "radius_mm", "low_curvature")
        )


def _chunks(n, workers):
    workers = max(1, int(workers))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _map_chunks(fn, n, workers):
    parts = _chunks(n, workers)
    if len(parts) <= 1:
        return [fn(s) for s in parts]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(fn, parts))


def plane_frames(points, nbr):
    """PCA frames for rows of neighbour indices.

    Returns ``(normals, tangent1, degenerate)``; normals are unoriented.
    """
    nb = points[nbr]
    c = nb - nb.mean(axis=1, keepdims=True)
    cov = np.empty((len(nbr), 3, 3))
    for a in range(3):
        for b in range(a, 3):
            cov[:, a, b] = cov[:, b, a] = (c[..., a] * c[..., b]).sum(axis=1) / nbr.shape[1]
    vals, vecs = np.linalg.eigh(cov)
    degenerate = np.sqrt(np.maximum(vals[:, 1], 0.0)) <= DEGENERATE_TOL_MM
    return vecs[:, :, 0], vecs[:, :, 2], degenerate


def fit_plane_frame(cloud, index, i, params):
    """Unoriented (normal, tangent1, tangent2) at point ``i``."""
    nbr, _ = k_nearest_many(index, cloud.points[i:i + 1], params.k_neighbors)
    n, t1, degenerate = plane_frames(cloud.points, nbr)
    if degenerate[0]:
        raise FrameError(f"degenerate neighborhood at point {i}", i)
    return n[0], t1[0], np.cross(n[0], t1[0])


def _neighbor_graph(nbr):
    rows = np.repeat(np.arange(len(nbr)), nbr.shape[1])
    cols = nbr.ravel()
    keep = rows != cols
    a = np.minimum(rows[keep], cols[keep])
    b = np.maximum(rows[keep], cols[keep])
    pairs = np.unique(np.stack([a, b], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


def orient_normals(cloud, normals, neighbors=None, k=10):
    """Flip normals to a consistent outward sense.

    Per connected piece of the k-NN graph, the point whose normal is most
    decisively aligned with ``p - centroid`` seeds the orientation, which then
    spreads along a minimum spanning tree weighted by ``1 - |n_i . n_j|``.
    """
    normals = np.array(normals, dtype=np.float64)
    pts = cloud.points
    n = len(pts)
    if neighbors is None:
        neighbors, _ = k_nearest_many(build_index(cloud), pts, min(k + 1, n))
    a, b = _neighbor_graph(np.asarray(neighbors))
    w = 1.0 - np.abs(np.einsum("ij,ij->i", normals[a], normals[b])) + 1e-9
    graph = coo_matrix((w, (a, b)), shape=(n, n)).tocsr()
    tree = minimum_spanning_tree(graph)
    tree = tree + tree.T
    outward = np.einsum("ij,ij->i", normals, pts - centroid(cloud))
    n_comp, comp = connected_components(tree, directed=False)
    sign = np.zeros(n)
    for label in range(n_comp):
        members = np.nonzero(comp == label)[0]
        seed = members[np.argmax(np.abs(outward[members]))]
        if not abs(outward[seed]) > _ORIENT_TOL:
            raise StrainError("cannot establish outward orientation")
        sign[seed] = 1.0 if outward[seed] > 0 else -1.0
        order, pred = breadth_first_order(tree, seed, directed=False, return_predecessors=True)
        for node in order[1:]:
            parent = pred[node]
            sign[node] = -1.0 if normals[node] @ (sign[parent] * normals[parent]) < 0 else 1.0
    return normals * sign[:, None]


def _radius_errors(status, ids):
    bad = np.nonzero(status != kernels.FIT_OK)[0]
    if len(bad):
        j = bad[0]
        i = int(ids[j])
        if status[j] == kernels.FIT_NO_CONSENSUS:
            raise FrameError(f"no consensus sphere at point {i}", i)
        raise FrameError(f"degenerate neighborhood at point {i}", i)


def _sphere_radii(points, ids, nbr, normals, params):
    return kernels.sphere_radii(
        points, points[ids], ids, nbr, normals, rng.derive_seed(params.rng_seed, rng.DOMAIN_MLESAC),
        params.mlesac_iterations, params.max_attempts, params.inlier_threshold_mm,
        params.min_inlier_fraction, params.r_max_mm,
    )


def fit_local_radius(cloud, index, i, normal, params):
    """Robust local radius at point ``i``; returns ``(radius_mm, low_curvature_flag)``.

    Consensus is sought among spheres through 4 random neighbours (streams
    keyed by ``(rng_seed, i)``). Inliers must lie on the same cap as point
    ``i``; ties in inlier count go to the smaller squared residual. The best
    sphere is refined by geometric least squares on its inliers. Flat
    neighbourhoods clamp to ``r_max_mm``.
    """
    k = params.k_neighbors
    if k > len(cloud):
        raise StrainError("k exceeds cloud size")
    nbr, _ = k_nearest_many(index, cloud.points[i:i + 1], k)
    ids = np.array([i], dtype=np.int64)
    r, flag, status = _sphere_radii(cloud.points, ids, nbr, np.reshape(normal, (1, 3)), params)
    _radius_errors(status, ids)
    return float(r[0]), bool(flag[0])


def estimate_all_frames(cloud, params=None, workers=1):
    """Frames and radii for every point; independent of ``workers``."""
    params = params or SurfaceFitParams()
    pts = cloud.points
    n = len(pts)
    if params.k_neighbors > n:
        raise StrainError("k exceeds cloud size")
    index = build_index(cloud)
    nbr, _ = k_nearest_many(index, pts, params.k_neighbors)

    parts = _map_chunks(lambda s: plane_frames(pts, nbr[s]), n, workers)
    raw_n = np.concatenate([p[0] for p in parts])
    t1 = np.concatenate([p[1] for p in parts])
    degenerate = np.concatenate([p[2] for p in parts])
    if degenerate.any():
        i = int(np.argmax(degenerate))
        raise FrameError(f"degenerate neighborhood at point {i}", i)

    normals = orient_normals(cloud, raw_n, neighbors=nbr)
    t2 = np.cross(normals, t1)

    ids = np.arange(n, dtype=np.int64)
    parts = _map_chunks(lambda s: _sphere_radii(pts, ids[s], nbr[s], normals[s], params), n, workers)
    radius = np.concatenate([p[0] for p in parts])
    flag = np.concatenate([p[1] for p in parts])
    status = np.concatenate([p[2] for p in parts])
    _radius_errors(status, ids)
    return SurfaceFrames(normals, t1, t2, radius, flag)
