"""Local circumferential strain as wall-normal displacement over local radius."""
from dataclasses import dataclass, field

import numpy as np

from .dispfield import interpolate_many, normal_components
from .errors import OutOfGridError, StrainError
from .geometry import WALL


@dataclass(frozen=True, eq=False)
class StrainField:
    """Per-point strain aligned with the reference cloud.

    ``mask`` is True for analysed wall points; masked-out entries hold NaN.
    ``meta`` records the (sigma, mu, seed) of the geometry evaluated.
    """

    values: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise StrainError("strain values and mask must be 1-D of equal length")
        if not np.all(np.isfinite(values[mask])):
            raise StrainError("masked strain values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def __len__(self):
        return len(self.values)

    @property
    def masked(self):
        return self.values[self.mask]

    def negated(self):
        return StrainField(-self.values, self.mask, dict(self.meta, negated=not self.meta.get("negated", False)))


def compute_strain(eval_cloud, ref_frames, field, ref_labels=None, meta=None):
    """Strain at every wall point of ``eval_cloud`` using reference frames.

    The displacement is sampled at the evaluated (possibly perturbed)
    positions, projected on the reference outward normal and divided by the
    reference radius, so the result is indexed like the reference cloud.
    Positive strain means outward normal displacement.
    """
    n = len(eval_cloud)
    if len(ref_frames) != n:
        raise StrainError("evaluation cloud and reference frames differ in length")
    labels = eval_cloud.labels if ref_labels is None else np.asarray(ref_labels)
    if len(labels) != n:
        raise StrainError("reference labels and evaluation cloud differ in length")
    mask = labels == WALL
    u, inside = interpolate_many(field, eval_cloud.points)
    outside = np.nonzero(mask & ~inside)[0]
    if len(outside):
        shown = ", ".join(str(i) for i in outside[:20])
        more = "" if len(outside) <= 20 else f", ... ({len(outside)} total)"
        raise OutOfGridError(f"points outside displacement grid: {shown}{more}", outside)
    delta_r = normal_components(u, ref_frames.normals)
    values = np.full(n, np.nan)
    values[mask] = delta_r[mask] / ref_frames.radius_mm[mask]
    return StrainField(values, mask, dict(meta or {}))


def strain_difference(a, b):
    """Pointwise ``a - b`` on the joint mask."""
    if len(a) != len(b):
        raise StrainError("strain fields differ in length")
    mask = a.mask & b.mask
    values = np.full(len(a), np.nan)
    values[mask] = a.values[mask] - b.values[mask]
    return StrainField(values, mask, {"difference_of": (a.meta, b.meta)})
