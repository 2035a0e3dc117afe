"""Agreement between perturbed and ground-truth strain."""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import StrainError

R2_THRESHOLD = 0.8
NRMSE_THRESHOLD = 0.05
NORMALIZATIONS = ("range", "mean", "std")


@dataclass(frozen=True)
class AgreementReport:
    r_squared: float
    nrmse: float
    peak: float
    p99: float
    n_points: int
    satisfactory: bool

    def as_dict(self):
        return asdict(self)


def is_satisfactory(r_squared, nrmse):
    # strict on both sides
    return bool(r_squared > R2_THRESHOLD and nrmse < NRMSE_THRESHOLD)


def identity_fit(x, y, normalization="range"):
    """R^2 and NRMSE of ``y`` against the identity line ``y = x``.

    R^2 = 1 - sum (y - x)^2 / sum (x - mean x)^2. The RMSE is normalised by
    the range of ``x`` by default (``"mean"``: |mean x|, ``"std"``: SD of x).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise StrainError("length mismatch between ground truth and perturbed strain")
    if len(x) < 2:
        raise StrainError("identity fit needs at least 2 points")
    if normalization not in NORMALIZATIONS:
        raise StrainError(f"normalization must be one of {NORMALIZATIONS}")
    n = len(x)
    xbar = math.fsum(x) / n
    ss_tot = math.fsum((x - xbar) ** 2)
    if ss_tot == 0.0:
        raise StrainError("ground-truth strain is constant")
    ss_res = math.fsum((y - x) ** 2)
    r_squared = 1.0 - ss_res / ss_tot
    rmse = math.sqrt(ss_res / n)
    if normalization == "range":
        scale = float(x.max() - x.min())
    elif normalization == "mean":
        scale = abs(xbar)
    else:
        scale = math.sqrt(ss_tot / n)
    if scale == 0.0:
        raise StrainError("NRMSE normalisation is zero")
    return r_squared, rmse / scale


def _masked(strain):
    if hasattr(strain, "mask"):
        return strain.values[strain.mask]
    return np.asarray(strain, dtype=np.float64).ravel()


def peak(strain):
    v = _masked(strain)
    if len(v) == 0:
        raise StrainError("no masked points")
    return float(v.max())


def percentile(strain, q):
    """Linear interpolation between order statistics at fraction ``q``."""
    if not 0.0 < q < 1.0:
        raise StrainError("q must lie in (0, 1)")
    v = np.sort(_masked(strain))
    if len(v) < 2:
        raise StrainError("percentile needs at least 2 masked points")
    h = q * (len(v) - 1)
    lo = int(math.floor(h))
    hi = min(lo + 1, len(v) - 1)
    return float(v[lo] + (h - lo) * (v[hi] - v[lo]))


def build_report(gt, pert, normalization="range", q=0.99):
    if len(gt) != len(pert):
        raise StrainError("length mismatch between ground truth and perturbed strain")
    mask = gt.mask & pert.mask
    x = gt.values[mask]
    y = pert.values[mask]
    r2, nrmse = identity_fit(x, y, normalization)
    return AgreementReport(
        r_squared=r2,
        nrmse=nrmse,
        peak=peak(y),
        p99=percentile(y, q),
        n_points=int(mask.sum()),
        satisfactory=is_satisfactory(r2, nrmse),
    )
