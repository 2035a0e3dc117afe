"""Wall strain on point clouds under controlled geometric perturbation."""
from ._backend import get_backend, set_backend
from .dispfield import DisplacementField, decompose, interpolate, interpolate_many
from .errors import FormatError, FrameError, OutOfGridError, StrainError
from .geometry import NeighborIndex, PointCloud, build_index, centroid, k_nearest, k_nearest_many
from .metrics import AgreementReport, build_report, identity_fit, peak, percentile
from .perturbation import PerturbationSpec, SweepConfig, perturb, run_sweep
from .phantoms import FieldSpec, PhantomSpec, analytic_strain, make_field, make_phantom_cloud
from .strain import StrainField, compute_strain, strain_difference
from .surface import (
    LocalSurfaceFrame,
    SurfaceFitParams,
    SurfaceFrames,
    estimate_all_frames,
    fit_local_radius,
    fit_plane_frame,
    orient_normals,
)

__version__ = "0.1.0"
