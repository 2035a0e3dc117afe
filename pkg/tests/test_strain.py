import numpy as np
import pytest

from aaastrain.dispfield import DisplacementField
from aaastrain.errors import OutOfGridError, StrainError
from aaastrain.geometry import PointCloud
from aaastrain.perturbation import PerturbationSpec, perturb
from aaastrain.phantoms import FieldSpec, analytic_strain, make_field
from aaastrain.strain import StrainField, compute_strain, strain_difference


def test_constant_radial_sphere(sphere_spec, sphere_cloud, sphere_frames):
    field = make_field(FieldSpec("constant_radial", 0.5).with_grid_for(sphere_spec, 1.0), sphere_spec)
    s = compute_strain(sphere_cloud, sphere_frames, field)
    assert s.mask.all()
    assert np.max(np.abs(s.masked - 0.02)) < 1e-3
    # pipeline against the closed form
    oracle = analytic_strain(sphere_spec, FieldSpec("constant_radial", 0.5), sphere_cloud)
    assert np.mean(np.abs(s.masked - oracle.masked) <= 5e-4) >= 0.99


def test_pipeline_matches_closed_form_for_anisotropic_field(sphere_spec, sphere_cloud, sphere_frames,
                                                            quadratic_field):
    spec = FieldSpec("quadratic_radial", 0.5, anisotropy=0.4, curvature=0.005)
    s = compute_strain(sphere_cloud, sphere_frames, quadratic_field)
    oracle = analytic_strain(sphere_spec, spec, sphere_cloud)
    assert np.mean(np.abs(s.masked - oracle.masked) <= 5e-4) >= 0.99


def test_zero_field(small_sphere):
    spec, cloud, frames = small_sphere
    field = make_field(FieldSpec("constant_radial", 0.0).with_grid_for(spec), spec)
    s = compute_strain(cloud, frames, field)
    assert np.all(s.masked == 0.0)


def test_zero_perturbation_is_bit_identical(small_sphere):
    spec, cloud, frames = small_sphere
    field = make_field(FieldSpec("linear_radial", 0.5, anisotropy=0.3).with_grid_for(spec), spec)
    gt = compute_strain(cloud, frames, field)
    again = compute_strain(perturb(cloud, frames, PerturbationSpec(0.0, 0.0, seed=99)), frames, field, cloud.labels)
    assert np.array_equal(gt.values, again.values)
    assert np.array_equal(gt.mask, again.mask)


def test_linear_in_field_and_sign(small_sphere):
    spec, cloud, frames = small_sphere
    field = make_field(FieldSpec("linear_radial", 0.5, anisotropy=0.3).with_grid_for(spec), spec)
    a = compute_strain(cloud, frames, field)
    b = compute_strain(cloud, frames, field.scaled(2.0))
    assert np.allclose(b.masked, 2 * a.masked, rtol=1e-12, atol=0)
    assert np.all(a.masked > 0)
    inward = compute_strain(cloud, frames, field.scaled(-1.0))
    assert np.all(inward.masked < 0)


def test_permuting_points_permutes_strain(small_sphere):
    spec, cloud, frames = small_sphere
    field = make_field(FieldSpec("quadratic_radial", 0.5, anisotropy=0.3, curvature=0.01).with_grid_for(spec), spec)
    s = compute_strain(cloud, frames, field)
    perm = np.random.default_rng(0).permutation(len(cloud))
    from aaastrain.surface import SurfaceFrames

    pf = SurfaceFrames(*(getattr(frames, f)[perm] for f in
                         ("normals", "tangent1", "tangent2", "radius_mm", "low_curvature")))
    sp = compute_strain(PointCloud(cloud.points[perm], cloud.labels[perm]), pf, field)
    assert np.array_equal(sp.values, s.values[perm])


def test_transition_zone_is_masked(small_sphere):
    spec, cloud, frames = small_sphere
    labels = cloud.labels.copy()
    labels[:10] = 1
    field = make_field(FieldSpec().with_grid_for(spec), spec)
    s = compute_strain(PointCloud(cloud.points, labels), frames, field)
    assert not s.mask[:10].any() and np.isnan(s.values[:10]).all()
    assert s.mask[10:].all()


def test_outside_grid_lists_indices(small_sphere):
    spec, cloud, frames = small_sphere
    f = DisplacementField(np.zeros((2, 2, 2, 3)), (60, 60, 10), (-30, -30, -5))
    with pytest.raises(OutOfGridError) as exc:
        compute_strain(cloud, frames, f)
    inside = np.abs(cloud.points[:, 2]) <= 5
    assert list(exc.value.indices) == np.nonzero(~inside)[0].tolist()
    assert "points outside displacement grid: 0, 1" in str(exc.value)


def test_strain_difference():
    rng = np.random.default_rng(0)
    a = StrainField(rng.normal(size=50), np.ones(50, bool))
    b = StrainField(rng.normal(size=50), np.ones(50, bool))
    assert np.all(strain_difference(a, a).values == 0)
    shifted = StrainField(a.values + 0.01, a.mask)
    assert np.allclose(strain_difference(shifted, a).values, 0.01, rtol=0, atol=1e-15)
    assert np.array_equal(strain_difference(a, b).values, a.values - b.values)
    with pytest.raises(StrainError):
        strain_difference(a, StrainField(np.zeros(3), np.ones(3, bool)))


def test_negated_flag():
    s = StrainField([0.1, np.nan], [True, False])
    n = s.negated()
    assert n.values[0] == -0.1 and n.meta["negated"] is True
    assert n.negated().meta["negated"] is False
