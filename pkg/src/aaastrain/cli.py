"""Command-line interface: ``aaastrain <command> ...``.

Failures print one line ``aaastrain: error: <message>`` on stderr and exit 1.
"""
import argparse
import json
import sys
from pathlib import Path

from . import io, phantoms
from .errors import StrainError
from .perturbation import PerturbationSpec, SweepConfig, ground_truth_strain, perturb, run_sweep
from .strain import compute_strain
from .surface import SurfaceFitParams, estimate_all_frames

_FIELD_KINDS = {
    "constant-radial": "constant_radial",
    "linear-radial": "linear_radial",
    "quadratic-radial": "quadratic_radial",
    "affine": "affine",
}


def parse_field_arg(text, phantom, anisotropy=0.0):
    """``kind:params`` -> FieldSpec centred on ``phantom``.

    constant-radial:m | linear-radial:m[:g] | quadratic-radial:m:g:q |
    affine:a11,a12,...,a33,b1,b2,b3
    """
    kind, _, params = text.partition(":")
    if kind not in _FIELD_KINDS:
        raise StrainError(f"unknown field kind {kind!r}; expected one of {sorted(_FIELD_KINDS)}")
    kind = _FIELD_KINDS[kind]
    axis = tuple(phantom.axis) if phantom.kind == "cylinder" else None
    common = dict(center=tuple(phantom.center), axis=axis, reference_radius_mm=phantom.radius_mm)
    try:
        if kind == "affine":
            nums = [float(v) for v in params.split(",")]
            if len(nums) != 12:
                raise StrainError("affine field needs 12 comma-separated numbers")
            spec = phantoms.FieldSpec(kind, matrix=(tuple(nums[0:3]), tuple(nums[3:6]), tuple(nums[6:9])),
                                      offset=tuple(nums[9:12]))
        else:
            nums = [float(v) for v in params.split(":")] if params else []
            if not nums:
                raise StrainError(f"{kind} needs a magnitude")
            extra = {}
            if len(nums) > 1:
                extra["gradient"] = nums[1]
            if len(nums) > 2:
                extra["curvature"] = nums[2]
            spec = phantoms.FieldSpec(kind, magnitude_mm=nums[0], anisotropy=anisotropy, **common, **extra)
    except ValueError:
        raise StrainError(f"malformed field parameters {params!r}") from None
    return spec


def _surface_params(args):
    return SurfaceFitParams(
        k_neighbors=args.k,
        mlesac_iterations=args.iterations,
        inlier_threshold_mm=args.threshold,
        min_inlier_fraction=args.min_inlier_fraction,
        r_max_mm=args.r_max,
        rng_seed=args.seed,
    )


def cmd_phantom(args):
    ph = phantoms.PhantomSpec(
        kind=args.kind, radius_mm=args.radius, n_points=args.points, length_mm=args.length,
        transition_band_mm=args.transition_band, seed=args.seed,
    )
    spec = parse_field_arg(args.field, ph, args.anisotropy).with_grid_for(ph, args.grid)
    cloud = phantoms.make_phantom_cloud(ph)
    field = phantoms.make_field(spec, ph)
    out = Path(args.out)
    io.write_cloud(cloud, out / "cloud.csv")
    io.write_field(field, out / "field.json")
    record = {"phantom": ph.__dict__, "field": args.field, "anisotropy": args.anisotropy, "grid_mm": args.grid}
    try:
        io.write_strain(phantoms.analytic_strain(ph, spec, cloud), out / "analytic_strain.csv")
        record["analytic_strain"] = "analytic_strain.csv"
    except StrainError:
        record["analytic_strain"] = None
    io.atomic_write_text(out / "phantom.json", json.dumps(record, indent=2) + "\n")


def cmd_frames(args):
    cloud = io.read_cloud(args.cloud)
    frames = estimate_all_frames(cloud, _surface_params(args), workers=args.workers)
    io.write_frames(frames, args.out)


def cmd_strain(args):
    cloud = io.read_cloud(args.cloud)
    frames = io.read_frames(args.frames)
    field = io.read_field(args.field)
    s = compute_strain(cloud, frames, field)
    io.write_strain(s.negated() if args.negate else s, args.out)


def cmd_perturb(args):
    cloud = io.read_cloud(args.cloud)
    frames = io.read_frames(args.frames)
    spec = PerturbationSpec(args.sigma, args.mu, args.seed, args.thickness)
    io.write_cloud(perturb(cloud, frames, spec), args.out)


_CONFIG_KEYS = {
    "cloud", "field", "frames", "surface", "sigma_list_mm", "mu_list_mm", "seed", "realizations",
    "wall_thickness_mm", "mode", "fixed_sigma_mm", "normalization", "negate", "workers", "pointwise",
}


def load_sweep_config(path):
    """Parse a sweep config JSON; returns (SweepConfig, inputs dict)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StrainError(f"{path}: malformed config: {exc}") from None
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise StrainError(f"{path}: unknown config keys {sorted(unknown)}")
    for key in ("cloud", "field"):
        if key not in doc:
            raise StrainError(f"{path}: config lacks '{key}'")
    sweep_keys = ("sigma_list_mm", "mu_list_mm", "seed", "realizations", "wall_thickness_mm", "mode",
                  "fixed_sigma_mm", "normalization", "negate")
    config = SweepConfig(**{k: doc[k] for k in sweep_keys if k in doc})
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p)

    inputs = {
        "cloud": resolve(doc["cloud"]),
        "field": resolve(doc["field"]),
        "frames": resolve(doc.get("frames")),
        "surface": SurfaceFitParams(**doc.get("surface", {})),
        "workers": int(doc.get("workers", 1)),
        "pointwise": bool(doc.get("pointwise", False)),
    }
    return config, inputs


def cmd_sweep(args):
    config, inputs = load_sweep_config(args.config)
    workers = args.workers if args.workers is not None else inputs["workers"]
    cloud = io.read_cloud(inputs["cloud"])
    field = io.read_field(inputs["field"])
    if inputs["frames"] is not None:
        frames = io.read_frames(inputs["frames"])
    else:
        frames = estimate_all_frames(cloud, inputs["surface"], workers=workers)
    gt = ground_truth_strain(cloud, frames, field, config.negate)
    results = run_sweep(cloud, frames, field, config, workers=workers, keep_strain=inputs["pointwise"])
    extra = {"n_low_curvature": int(frames.low_curvature[cloud.labels == 0].sum())}
    io.write_sweep_report(args.out, results, config, gt, extra=extra, pointwise=inputs["pointwise"])


def build_parser():
    p = argparse.ArgumentParser(prog="aaastrain", description="Local wall strain on point clouds under normal perturbation.")
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="write an analytic phantom cloud, field and strain")
    ph.add_argument("--kind", choices=("sphere", "cylinder"), default="sphere")
    ph.add_argument("--radius", type=float, default=25.0)
    ph.add_argument("--points", type=int, default=20000)
    ph.add_argument("--length", type=float, default=80.0, help="cylinder length (mm)")
    ph.add_argument("--transition-band", type=float, default=0.0)
    ph.add_argument("--field", default="constant-radial:0.5")
    ph.add_argument("--anisotropy", type=float, default=0.0)
    ph.add_argument("--grid", type=float, default=1.0, help="voxel spacing (mm)")
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--out", required=True)
    ph.set_defaults(func=cmd_phantom)

    fr = sub.add_parser("frames", help="estimate per-point normals, tangents and radii")
    fr.add_argument("--cloud", required=True)
    fr.add_argument("--k", type=int, default=30)
    fr.add_argument("--iterations", type=int, default=200)
    fr.add_argument("--threshold", type=float, default=0.3, help="inlier threshold (mm)")
    fr.add_argument("--min-inlier-fraction", type=float, default=0.5)
    fr.add_argument("--r-max", type=float, default=300.0)
    fr.add_argument("--seed", type=int, default=0)
    fr.add_argument("--workers", type=int, default=1)
    fr.add_argument("--out", required=True)
    fr.set_defaults(func=cmd_frames)

    st = sub.add_parser("strain", help="strain of a cloud under a displacement field")
    st.add_argument("--cloud", required=True)
    st.add_argument("--frames", required=True)
    st.add_argument("--field", required=True, help="field header JSON")
    st.add_argument("--negate", action="store_true", help="report inward displacement as positive")
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_strain)

    pt = sub.add_parser("perturb", help="offset points along their normals")
    pt.add_argument("--cloud", required=True)
    pt.add_argument("--frames", required=True)
    pt.add_argument("--sigma", type=float, default=0.0, help="SD of offsets (mm)")
    pt.add_argument("--mu", type=float, default=0.0, help="mean offset (mm), positive outward")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--thickness", type=float, default=1.5, help="wall thickness (mm)")
    pt.add_argument("--out", required=True)
    pt.set_defaults(func=cmd_perturb)

    sw = sub.add_parser("sweep", help="run a (sigma, mu) perturbation sweep")
    sw.add_argument("--config", required=True)
    sw.add_argument("--workers", type=int, default=None)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (StrainError, OSError, TypeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"aaastrain: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
