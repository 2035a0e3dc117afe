"""Analytic test geometries and displacement fields with closed-form strain."""
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .dispfield import DisplacementField
from .errors import StrainError
from .geometry import TRANSITION, WALL, PointCloud
from .strain import StrainField

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
# largest sweep offset (six 1.5 mm wall thicknesses) plus three voxels
SWEEP_MARGIN_MM = 9.0
MARGIN_VOXELS = 3

RADIAL_KINDS = ("constant_radial", "linear_radial", "quadratic_radial")
FIELD_KINDS = RADIAL_KINDS + ("affine",)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class PhantomSpec:
    kind: str = "sphere"
    radius_mm: float = 25.0
    n_points: int = 20000
    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    length_mm: float = 80.0
    transition_band_mm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sphere", "cylinder"):
            raise StrainError("phantom kind must be 'sphere' or 'cylinder'")
        if not self.radius_mm > 0:
            raise StrainError("radius must be positive")
        if self.n_points < 100:
            raise StrainError("n_points must be >= 100")
        if self.kind == "cylinder" and not self.length_mm > 0:
            raise StrainError("cylinder length must be positive")

    def half_extent(self):
        """Half-width of the axis-aligned bounding box per axis."""
        if self.kind == "sphere":
            return np.full(3, float(self.radius_mm))
        a = _unit(self.axis)
        return np.abs(a) * self.length_mm / 2.0 + self.radius_mm * np.sqrt(np.clip(1.0 - a * a, 0.0, None))


def _orthonormal_pair(axis):
    a = _unit(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(a, helper))
    return e1, np.cross(a, e1)


def make_phantom_cloud(spec):
    """Quasi-uniform surface samples (Fibonacci spiral on sphere and cylinder).

    ``seed`` rotates the spiral about the axis. Points within
    ``transition_band_mm`` of the cylinder ends, or of the sphere's pole along
    ``axis``, are labelled transition zone.
    """
    n = spec.n_points
    i = np.arange(n, dtype=np.float64)
    c = np.asarray(spec.center, dtype=np.float64)
    a = _unit(spec.axis)
    e1, e2 = _orthonormal_pair(a)
    phase = 2.0 * np.pi * float(rng.uniform(rng.derive_seed(spec.seed), 0, 0)) if spec.seed else 0.0
    phi = i * GOLDEN_ANGLE + phase
    if spec.kind == "sphere":
        h = 1.0 - (2.0 * i + 1.0) / n
        rho = np.sqrt(1.0 - h * h)
        unit = np.cos(phi)[:, None] * rho[:, None] * e1 + np.sin(phi)[:, None] * rho[:, None] * e2 + h[:, None] * a
        # renormalise so |p - c| = R to rounding
        unit /= np.linalg.norm(unit, axis=1, keepdims=True)
        pts = c + spec.radius_mm * unit
        height = spec.radius_mm * h
        labels = np.where(height > spec.radius_mm - spec.transition_band_mm, TRANSITION, WALL) \
            if spec.transition_band_mm > 0 else np.zeros(n, dtype=np.int8)
    else:
        height = spec.length_mm * ((i + 0.5) / n - 0.5)
        radial = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        pts = c + spec.radius_mm * radial + height[:, None] * a
        edge = spec.length_mm / 2.0 - np.abs(height)
        labels = np.where(edge < spec.transition_band_mm, TRANSITION, WALL)
    return PointCloud(pts, labels, id=f"phantom:{spec.kind}:R={spec.radius_mm!r}:n={n}")


@dataclass(frozen=True)
class FieldSpec:
    """Analytic displacement sampled on a grid.

    Radial kinds point along ``x - center`` (with the ``axis`` component
    removed when ``axis`` is given, i.e. cylindrical). Their magnitude at
    radial distance r is

    * constant_radial: ``m``
    * linear_radial: ``m + g (r - R0)``; ``g`` defaults to ``m / R0`` so the
      field is ``m (x - c) / R0``
    * quadratic_radial: ``m + g (r - R0) + q (r - R0)^2``

    times ``1 + a (s . d)`` where ``d`` is the radial unit vector and ``s``
    the ``anisotropy_axis``. ``affine`` is ``A x + b``.
    """

    kind: str = "constant_radial"
    magnitude_mm: float = 0.5
    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = None
    reference_radius_mm: float = 25.0
    gradient: float = None
    curvature: float = 0.0
    anisotropy: float = 0.0
    anisotropy_axis: tuple = (0.0, 0.0, 1.0)
    matrix: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    offset: tuple = (0.0, 0.0, 0.0)
    dims: tuple = (2, 2, 2)
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    origin_mm: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise StrainError(f"field kind must be one of {FIELD_KINDS}")
        if min(self.dims) < 2:
            raise StrainError("dims must be >= 2")

    @property
    def slope(self):
        if self.kind == "constant_radial":
            return 0.0
        if self.gradient is None:
            return self.magnitude_mm / self.reference_radius_mm
        return float(self.gradient)

    def with_grid_for(self, phantom, spacing_mm=1.0, margin_mm=SWEEP_MARGIN_MM):
        """Copy whose grid covers ``phantom`` plus ``margin_mm`` and 3 voxels.

        Random offsets have unbounded tails; pass a wider margin than the
        default when large sigma must stay on the grid.
        """
        spacing = np.broadcast_to(np.asarray(spacing_mm, dtype=np.float64), (3,))
        half = phantom.half_extent() + max(margin_mm, SWEEP_MARGIN_MM) + MARGIN_VOXELS * spacing
        counts = np.ceil(2.0 * half / spacing).astype(int) + 1
        lo = np.asarray(phantom.center, dtype=np.float64) - (counts - 1) * spacing / 2.0
        return replace(self, dims=tuple(int(c) for c in counts), spacing_mm=tuple(spacing.tolist()),
                        origin_mm=tuple(lo.tolist()))

    def radial_magnitude(self, r, cos_aniso):
        dr = r - self.reference_radius_mm
        mag = self.magnitude_mm
        if self.kind != "constant_radial":
            mag = mag + self.slope * dr
        if self.kind == "quadratic_radial":
            mag = mag + self.curvature * dr * dr
        return mag * (1.0 + self.anisotropy * cos_aniso)

    def evaluate(self, x):
        """Analytic displacement at (N, 3) positions."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "affine":
            return x @ np.asarray(self.matrix, dtype=np.float64).T + np.asarray(self.offset, dtype=np.float64)
        d = x - np.asarray(self.center, dtype=np.float64)
        if self.axis is not None:
            a = _unit(self.axis)
            d = d - (d @ a)[:, None] * a
        r = np.linalg.norm(d, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, d / r[:, None], 0.0)
        mag = self.radial_magnitude(r, unit @ _unit(self.anisotropy_axis))
        return mag[:, None] * unit


def _covers(spec, phantom):
    spacing = np.asarray(spec.spacing_mm, dtype=np.float64)
    lo = np.asarray(spec.origin_mm, dtype=np.float64)
    hi = lo + (np.asarray(spec.dims) - 1) * spacing
    need = phantom.half_extent() + SWEEP_MARGIN_MM + MARGIN_VOXELS * spacing
    c = np.asarray(phantom.center, dtype=np.float64)
    # tolerate rounding in the grid construction
    slack = 1e-9 * (1.0 + np.abs(c) + need)
    return bool(np.all(lo <= c - need + slack) and np.all(hi >= c + need - slack))


def make_field(spec, phantom=None):
    """Sample ``spec`` at voxel centres; checks coverage when ``phantom`` is given.

    Radial fields are zero on the singular centre (or axis) voxels.
    """
    if phantom is not None and not _covers(spec, phantom):
        raise StrainError("grid does not cover phantom plus margin")
    nx, ny, nz = spec.dims
    o = np.asarray(spec.origin_mm, dtype=np.float64)
    s = np.asarray(spec.spacing_mm, dtype=np.float64)
    gx, gy, gz = np.meshgrid(o[0] + s[0] * np.arange(nx), o[1] + s[1] * np.arange(ny),
                             o[2] + s[2] * np.arange(nz), indexing="ij")
    xyz = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    data = spec.evaluate(xyz).reshape(nx, ny, nz, 3)
    return DisplacementField(data, spec.spacing_mm, spec.origin_mm)


def analytic_strain(phantom, field_spec, cloud=None):
    """Closed-form strain on a phantom for radial fields centred on it."""
    if field_spec.kind not in RADIAL_KINDS:
        raise StrainError("no closed form")
    c = np.asarray(phantom.center, dtype=np.float64)
    same_center = np.allclose(np.asarray(field_spec.center, dtype=np.float64), c)
    if phantom.kind == "sphere":
        ok = same_center and field_spec.axis is None
    else:
        ok = field_spec.axis is not None and np.allclose(np.abs(_unit(field_spec.axis) @ _unit(phantom.axis)), 1.0)
        if ok:
            # the field axis must pass through the phantom axis
            a = _unit(phantom.axis)
            off = np.asarray(field_spec.center, dtype=np.float64) - c
            ok = np.allclose(off - (off @ a) * a, 0.0)
    if not ok:
        raise StrainError("no closed form")
    cloud = cloud if cloud is not None else make_phantom_cloud(phantom)
    d = cloud.points - c
    if phantom.kind == "cylinder":
        a = _unit(phantom.axis)
        d = d - (d @ a)[:, None] * a
    unit = d / np.linalg.norm(d, axis=1, keepdims=True)
    mag = field_spec.radial_magnitude(phantom.radius_mm, unit @ _unit(field_spec.anisotropy_axis))
    mask = cloud.labels == WALL
    values = np.where(mask, mag / phantom.radius_mm, np.nan)
    return StrainField(values, mask, {"sigma_mm": 0.0, "mu_mm": 0.0, "seed": None, "analytic": True})
