"""Gridded displacement fields and their wall-normal decomposition."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import OutOfGridError, StrainError


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """3-vectors (mm) on a regular grid of voxel centres.

    ``data`` has shape (nx, ny, nz, 3) indexed [ix, iy, iz, component], with
    components and axes in patient R, A, S order. ``origin_mm`` is the centre
    of voxel (0, 0, 0).
    """

    data: np.ndarray
    spacing_mm: tuple
    origin_mm: tuple

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[3] != 3:
            raise StrainError(f"field data must have shape (nx, ny, nz, 3), got {data.shape}")
        if min(data.shape[:3]) < 2:
            raise StrainError("dims must be >= 2")
        if not np.all(np.isfinite(data)):
            raise StrainError("field vectors must be finite")
        spacing = np.asarray(self.spacing_mm, dtype=np.float64).reshape(3)
        origin = np.asarray(self.origin_mm, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(spacing)) or np.any(spacing <= 0):
            raise StrainError("spacing must be finite and positive")
        if not np.all(np.isfinite(origin)):
            raise StrainError("origin must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in spacing))
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in origin))

    @property
    def dims(self):
        return self.data.shape[:3]

    @property
    def upper_mm(self):
        """Centre of the last voxel along each axis."""
        return tuple(o + (n - 1) * s for o, n, s in zip(self.origin_mm, self.dims, self.spacing_mm))

    def scaled(self, factor):
        return DisplacementField(self.data * factor, self.spacing_mm, self.origin_mm)


@dataclass(frozen=True)
class DecomposedDisplacement:
    delta_r_mm: float
    tangential_mm: tuple


def interpolate_many(field, points):
    """Trilinear values at ``points``; returns ``(values, inside)`` without raising."""
    return kernels.trilinear(field.data, field.origin_mm, field.spacing_mm, points)


def interpolate(field, p):
    values, inside = interpolate_many(field, np.asarray(p, dtype=np.float64).reshape(1, 3))
    if not inside[0]:
        raise OutOfGridError("point outside displacement grid", [0])
    return values[0]


def decompose(u, frame):
    u = np.asarray(u, dtype=np.float64)
    return DecomposedDisplacement(
        float(u @ frame.normal),
        (float(u @ frame.tangent1), float(u @ frame.tangent2)),
    )


def normal_components(u, normals):
    """Row-wise u . n for (N, 3) arrays, summed in x, y, z order."""
    return u[:, 0] * normals[:, 0] + u[:, 1] * normals[:, 1] + u[:, 2] * normals[:, 2]
