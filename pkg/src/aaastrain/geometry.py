"""Point clouds and exact k-nearest-neighbour queries."""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import StrainError

WALL = 0
TRANSITION = 1

# extra candidates fetched beyond k so index tie-breaking rarely needs a ball query
_SLACK = 4


@dataclass(frozen=True)
class PointCloud:
    """Ordered wall points in mm with per-point region labels.

    Labels are 0 for analysed wall and 1 for the transition zone.
    """

    points: np.ndarray
    labels: np.ndarray = None
    id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise StrainError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise StrainError("empty point cloud")
        if not np.all(np.isfinite(pts)):
            raise StrainError("point coordinates must be finite")
        if self.labels is None:
            labels = np.zeros(len(pts), dtype=np.int8)
        else:
            labels = np.asarray(self.labels)
            if labels.shape != (len(pts),):
                raise StrainError("labels and points must have equal length")
            if not np.all(np.isin(labels, (WALL, TRANSITION))):
                raise StrainError("invalid label: labels must be 0 or 1")
            labels = labels.astype(np.int8)
        pts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)

    def with_points(self, points, id=None):
        """Same labels, new coordinates (index correspondence kept)."""
        return PointCloud(points, self.labels, self.id if id is None else id)


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    """Immutable exact k-NN structure over a snapshot of a cloud."""

    points: np.ndarray
    tree: cKDTree = field(repr=False)

    def __len__(self):
        return len(self.points)


def build_index(cloud):
    if len(cloud) == 0:  # pragma: no cover - PointCloud already refuses this
        raise StrainError("empty point cloud")
    return NeighborIndex(cloud.points, cKDTree(cloud.points))


def _distances(points, query, idx):
    d = points[idx] - query[:, None, :]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def _resolve_ties(index, q, k, radius):
    cand = np.asarray(index.tree.query_ball_point(q, radius * (1.0 + 1e-9) + 1e-300), dtype=np.int64)
    d = _distances(index.points, q[None, :], cand[None, :])[0]
    order = np.lexsort((cand, d))[:k]
    return cand[order], d[order]


def k_nearest_many(index, queries, k):
    """Exact k-NN for a batch of queries.

    Returns ``(indices, distances)``, each of shape (M, k), sorted by
    distance with ties broken by the lower point index.
    """
    n = len(index)
    k = int(k)
    if k < 1:
        raise StrainError("k must be at least 1")
    if k > n:
        raise StrainError("k exceeds cloud size")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    m = min(n, k + _SLACK)
    _, cand = index.tree.query(q, k=m)
    cand = np.asarray(cand, dtype=np.int64).reshape(len(q), m)
    # cKDTree's own distances may differ in the last ulp; rank on ours
    dist = _distances(index.points, q, cand)
    order = np.lexsort((cand, dist), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    out_i, out_d = cand[:, :k].copy(), dist[:, :k].copy()
    if m > k:
        # a candidate just outside the window could still tie the k-th
        suspect = np.nonzero(dist[:, -1] <= dist[:, k - 1] * (1.0 + 1e-9))[0]
        for r in suspect:
            out_i[r], out_d[r] = _resolve_ties(index, q[r], k, dist[r, k - 1])
    return out_i, out_d


def k_nearest(index, query, k):
    """k nearest points to a single 3D query as a list of (index, distance)."""
    idx, dist = k_nearest_many(index, np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def centroid(cloud):
    return cloud.points.mean(axis=0)
