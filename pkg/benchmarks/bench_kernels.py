"""Time the numba and numpy kernel backends on a sphere phantom.

    python benchmarks/bench_kernels.py [--points 20000] [--repeat 3]

Reports the best wall time per backend for the sphere fit and trilinear
interpolation, and checks that both backends return identical arrays.
"""
import argparse
import time

import numpy as np

from aaastrain import _backend, kernels, rng
from aaastrain.geometry import build_index, k_nearest_many
from aaastrain.phantoms import FieldSpec, PhantomSpec, make_field, make_phantom_cloud
from aaastrain.surface import SurfaceFitParams


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--interp-points", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    ph = PhantomSpec(radius_mm=25.0, n_points=args.points)
    cloud = make_phantom_cloud(ph)
    pts = cloud.points
    params = SurfaceFitParams()
    nbr, _ = k_nearest_many(build_index(cloud), pts, params.k_neighbors)
    normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    ids = np.arange(len(pts), dtype=np.int64)
    fit_args = (pts, pts, ids, nbr, normals, rng.derive_seed(0, rng.DOMAIN_MLESAC), params.mlesac_iterations,
                params.max_attempts, params.inlier_threshold_mm, params.min_inlier_fraction, params.r_max_mm)

    field = make_field(FieldSpec("quadratic_radial", 0.5, anisotropy=0.4, curvature=0.005).with_grid_for(ph), ph)
    lo, hi = np.array(field.origin_mm), np.array(field.upper_mm)
    q = lo + np.random.default_rng(0).uniform(size=(args.interp_points, 3)) * (hi - lo)
    interp_args = (field.data, field.origin_mm, field.spacing_mm, q)

    backends = ["numba", "numpy"] if _backend.HAS_NUMBA else ["numpy"]
    results = {}
    prev = _backend.get_backend()
    try:
        for name in backends:
            _backend.set_backend(name)
            # first call compiles (or loads the on-disk cache)
            kernels.sphere_radii(pts, pts[:8], ids[:8], nbr[:8], normals[:8], *fit_args[5:])
            kernels.trilinear(*interp_args[:3], q[:8])
            t_fit, fit = best_of(lambda: kernels.sphere_radii(*fit_args), args.repeat)
            t_int, val = best_of(lambda: kernels.trilinear(*interp_args), args.repeat)
            results[name] = (t_fit, fit, t_int, val)
    finally:
        _backend.set_backend(prev)

    print(f"sphere fit: {args.points} neighbourhoods of {params.k_neighbors}, {params.mlesac_iterations} draws")
    print(f"trilinear:  {args.interp_points} points on a {field.dims} grid")
    print(f"{'backend':<8} {'fit [s]':>9} {'interp [s]':>11}")
    for name, (t_fit, _, t_int, _) in results.items():
        print(f"{name:<8} {t_fit:9.3f} {t_int:11.3f}")
    if len(results) == 2:
        a, b = results["numba"], results["numpy"]
        print(f"speed-up  {b[0] / a[0]:9.1f}x {b[2] / a[2]:10.1f}x")
        same = all(np.array_equal(x, y, equal_nan=True) for x, y in zip(a[1] + a[3], b[1] + b[3]))
        print("outputs identical:", same)


if __name__ == "__main__":
    main()
