"""Text and binary file formats.

Floats are written with ``repr`` (shortest string that parses back to the
same double), so text round-trips are exact. Every writer goes through a
temporary file and ``os.replace``.
"""
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .dispfield import DisplacementField
from .errors import FormatError
from .geometry import PointCloud
from .surface import SurfaceFrames

CLOUD_HEADER = "x,y,z,label"
FRAMES_HEADER = "index,nx,ny,nz,t1x,t1y,t1z,t2x,t2y,t2z,radius,flag"
STRAIN_HEADER = "index,strain,mask"
LONG_HEADER = "sigma,mu,realization,metric,value"
POINTWISE_HEADER = "index,gt_strain,pert_strain"


def fmt(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table(rows, header):
    return header + "\n" + "".join(",".join(r) + "\n" for r in rows)


def _read_table(path, header):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != header:
        raise FormatError(f"{path}: missing header (expected '{header}')")
    ncol = header.count(",") + 1
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncol:
            raise FormatError(f"{path}: line {lineno}: expected {ncol} fields, got {len(parts)}")
        rows.append((lineno, [p.strip() for p in parts]))
    return rows


def _float(path, lineno, text, finite=True):
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"{path}: line {lineno}: malformed number {text!r}") from None
    if finite and not math.isfinite(v):
        raise FormatError(f"{path}: line {lineno}: non-finite value {text!r}")
    return v


def _int(path, lineno, text):
    try:
        return int(text)
    except ValueError:
        raise FormatError(f"{path}: line {lineno}: malformed integer {text!r}") from None


def write_cloud(cloud, path):
    rows = ([fmt(x), fmt(y), fmt(z), str(int(lab))] for (x, y, z), lab in zip(cloud.points, cloud.labels))
    atomic_write_text(path, _table(rows, CLOUD_HEADER))


def read_cloud(path):
    rows = _read_table(path, CLOUD_HEADER)
    if not rows:
        raise FormatError(f"{path}: empty point cloud")
    pts = np.empty((len(rows), 3))
    labels = np.empty(len(rows), dtype=np.int8)
    for r, (lineno, parts) in enumerate(rows):
        pts[r] = [_float(path, lineno, t) for t in parts[:3]]
        lab = _int(path, lineno, parts[3])
        if lab not in (0, 1):
            raise FormatError(f"{path}: line {lineno}: invalid label {lab}")
        labels[r] = lab
    return PointCloud(pts, labels, id=str(path))


def write_field(field, header_path, data_file=None):
    header_path = Path(header_path)
    data_file = data_file or header_path.with_suffix(".bin").name
    nx, ny, nz = field.dims
    header = {
        "dims": [nx, ny, nz],
        "spacing_mm": list(field.spacing_mm),
        "origin_mm": list(field.origin_mm),
        "component_order": "RAS",
        "scalar": "f32le",
        "data_file": data_file,
    }
    # x fastest, then y, then z; components interleaved
    raw = np.ascontiguousarray(field.data.transpose(2, 1, 0, 3), dtype="<f4").tobytes()
    atomic_write_bytes(header_path.parent / data_file, raw)
    atomic_write_text(header_path, json.dumps(header, indent=2) + "\n")


def read_field(header_path):
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{header_path}: malformed header: {exc}") from None
    for key in ("dims", "spacing_mm", "origin_mm", "data_file"):
        if key not in header:
            raise FormatError(f"{header_path}: header lacks '{key}'")
    if header.get("scalar", "f32le") != "f32le":
        raise FormatError(f"{header_path}: unsupported scalar {header['scalar']!r}")
    if header.get("component_order", "RAS") != "RAS":
        raise FormatError(f"{header_path}: unsupported component order {header['component_order']!r}")
    dims = [int(d) for d in header["dims"]]
    if len(dims) != 3 or min(dims) < 2:
        raise FormatError(f"{header_path}: dims must be >= 2")
    nums = list(header["spacing_mm"]) + list(header["origin_mm"])
    if len(nums) != 6 or not all(math.isfinite(float(v)) for v in nums):
        raise FormatError(f"{header_path}: header values must be finite 3-vectors")
    nx, ny, nz = dims
    expected = 12 * nx * ny * nz
    raw = (header_path.parent / header["data_file"]).read_bytes()
    if len(raw) != expected:
        raise FormatError(f"data size mismatch: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3).astype(np.float64)
    return DisplacementField(data, header["spacing_mm"], header["origin_mm"])


def write_frames(frames, path):
    rows = (
        [str(i)] + [fmt(v) for v in (*n, *t1, *t2, r)] + [str(int(f))]
        for i, (n, t1, t2, r, f) in enumerate(
            zip(frames.normals, frames.tangent1, frames.tangent2, frames.radius_mm, frames.low_curvature))
    )
    atomic_write_text(path, _table(rows, FRAMES_HEADER))


def read_frames(path):
    rows = _read_table(path, FRAMES_HEADER)
    vals = np.empty((len(rows), 10))
    flags = np.empty(len(rows), dtype=bool)
    for r, (lineno, parts) in enumerate(rows):
        if _int(path, lineno, parts[0]) != r:
            raise FormatError(f"{path}: line {lineno}: frame indices must be 0..N-1 in order")
        vals[r] = [_float(path, lineno, t) for t in parts[1:11]]
        flag = _int(path, lineno, parts[11])
        if flag not in (0, 1):
            raise FormatError(f"{path}: line {lineno}: flag must be 0 or 1")
        flags[r] = bool(flag)
    return SurfaceFrames(vals[:, 0:3], vals[:, 3:6], vals[:, 6:9], vals[:, 9], flags)


def write_strain(strain, path):
    rows = ([str(i), fmt(v), str(int(m))] for i, (v, m) in enumerate(zip(strain.values, strain.mask)))
    atomic_write_text(path, _table(rows, STRAIN_HEADER))


def read_strain(path):
    from .strain import StrainField

    rows = _read_table(path, STRAIN_HEADER)
    values = np.empty(len(rows))
    mask = np.empty(len(rows), dtype=bool)
    for r, (lineno, parts) in enumerate(rows):
        values[r] = _float(path, lineno, parts[1], finite=False)
        mask[r] = bool(_int(path, lineno, parts[2]))
    return StrainField(values, mask)


def write_pointwise(gt, pert, path):
    idx = np.nonzero(gt.mask & pert.mask)[0]
    rows = ([str(i), fmt(gt.values[i]), fmt(pert.values[i])] for i in idx)
    atomic_write_text(path, _table(rows, POINTWISE_HEADER))


def _json_number(v):
    v = float(v)
    return None if math.isnan(v) else v


def cell_summary(res, wall_thickness_mm):
    rep = res.report
    return {
        "scenario": res.scenario,
        "sigma_mm": res.sigma_mm,
        "mu_mm": res.mu_mm,
        "sigma_wt": res.sigma_mm / wall_thickness_mm,
        "mu_wt": res.mu_mm / wall_thickness_mm,
        "realization": res.realization,
        "seed": res.seed,
        "r_squared": None if rep is None else rep.r_squared,
        "nrmse": None if rep is None else rep.nrmse,
        "peak": None if rep is None else rep.peak,
        "p99": None if rep is None else rep.p99,
        "n_points": None if rep is None else rep.n_points,
        "satisfactory": False if rep is None else rep.satisfactory,
        "failed": res.failed,
        "failed_indices": res.failed_indices,
    }


def long_rows(results):
    out = []
    for res in results:
        rep = res.report
        for metric in ("r_squared", "nrmse", "peak", "p99"):
            v = math.nan if rep is None else getattr(rep, metric)
            out.append([fmt(res.sigma_mm), fmt(res.mu_mm), str(res.realization), metric, fmt(v)])
    return out


def write_sweep_report(out_dir, results, config, ground_truth, extra=None, pointwise=False):
    """Summary JSON, plot-ready long tables and optional per-point scatter data."""
    from .metrics import peak, percentile

    out_dir = Path(out_dir)
    gt_vals = ground_truth.masked
    summary = {
        "config": {
            "sigma_list_mm": list(config.sigma_list_mm),
            "mu_list_mm": list(config.mu_list_mm),
            "seed": config.seed,
            "realizations": config.realizations,
            "wall_thickness_mm": config.wall_thickness_mm,
            "mode": config.mode,
            "fixed_sigma_mm": config.fixed_sigma_mm,
            "normalization": config.normalization,
            "negate": config.negate,
        },
        "ground_truth": {
            "peak": peak(gt_vals),
            "p99": percentile(gt_vals, 0.99),
            "n_points": int(len(gt_vals)),
        },
        "cells": [cell_summary(r, config.wall_thickness_mm) for r in results],
    }
    if extra:
        summary.update(extra)
    atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2, allow_nan=False) + "\n")
    if config.mode == "grid":
        atomic_write_text(out_dir / "metrics_long.csv", _table(long_rows(results), LONG_HEADER))
    else:
        for scen in ("a", "b", "c"):
            rows = long_rows([r for r in results if r.scenario == scen])
            atomic_write_text(out_dir / f"metrics_long_{scen}.csv", _table(rows, LONG_HEADER))
    if pointwise:
        for ci, res in enumerate(results):
            if res.strain is not None:
                write_pointwise(ground_truth, res.strain, out_dir / "pointwise" / f"cell{ci:03d}.csv")
