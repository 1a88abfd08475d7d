"""End-to-end workflows, parameter presets and a batch runner.

Both pipelines write the artifacts of a stage before starting the next one,
so an aborted run leaves a consistent prefix on disk together with a report
listing the completed stages.  Reports carry no timings and are therefore
byte-identical across repeated runs.
"""

from __future__ import annotations

import contextlib
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .core import (BinaryMask, Contour, DisplacementField, GridSpec,
                   RegistrationParams, ScalarField, SolverError, TriMesh, ValidationError)
from .data_term import deform_points, surface_distances, template_quadrature
from .distance import signed_distance_transform
from .interp import sample
from .metrics import boundary_nodes, dice, directed_distances, hausdorff, nearest_rank
from .nonrigid import register_nonrigid
from .parametric import affine_to_displacement, register_parametric
from .raster import rasterize
from .segmentation import make_circle_contour, self_intersections, threshold_mask
from .warp import blend, pullback_warp

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

PRESETS = {
    "qlf": RegistrationParams(alpha=1e-3, mu=1e-3, lambda_schedule=(1e-4, 1e-5, 1e-6, 1e-7)),
    "dp": RegistrationParams(alpha=1e-3, mu=1e-1, lambda_schedule=(1e-4, 1e-5, 1e-6)),
    "hips": RegistrationParams(alpha=1.0, mu=1.0, lambda_schedule=(1e0, 1e-1, 1e-2, 1e-3, 1e-4),
                               backend="direct"),
    "shapes": RegistrationParams(alpha=1.0, mu=1.0,
                                 lambda_schedule=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)),
    "brain": RegistrationParams(alpha=1e2, mu=1e2,
                                lambda_schedule=(1e1, 1e0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5),
                                backend="direct"),
}


def preset(name: str) -> RegistrationParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def resolve_params(preset_name: Optional[str] = None, config: Optional[dict] = None,
                   overrides: Optional[dict] = None) -> RegistrationParams:
    """Flags > config file > preset > built-in defaults."""
    config = dict(config or {})
    name = preset_name or config.pop("preset", None)
    config.pop("preset", None)
    base = preset(name) if name else RegistrationParams()
    known = set(RegistrationParams.__dataclass_fields__) - {"extras"}
    merged = {}
    for source in (config, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in known:
                raise ValidationError(f"unknown parameter {key!r}")
            merged[key] = tuple(value) if key == "lambda_schedule" else value
    return base.replace(**merged)


@dataclass
class PipelineReport:
    kind: str
    config: dict
    stages: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    status: str = "running"
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "config": self.config,
            "stages": self.stages,
            "metrics": self.metrics,
            "artifacts": self.artifacts,
            "warnings": self.warnings,
        }


class _Writer:
    """Writes artifacts into ``out_dir`` (or nowhere) and records them."""

    def __init__(self, out_dir, report: PipelineReport):
        self.dir = None if out_dir is None else Path(out_dir)
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
        self.report = report

    def put(self, key, name, writer, obj):
        if self.dir is None:
            return
        writer(self.dir / name, obj)
        self.report.artifacts[key] = name

    def flush(self):
        if self.dir is not None:
            io.write_json(self.dir / "report.json", self.report.to_dict())


@contextlib.contextmanager
def _stage(name: str, report: PipelineReport, writer: _Writer):
    try:
        yield
    except (SolverError, ValidationError) as exc:
        report.status = "failed"
        report.failed_stage = name
        report.error = str(exc)
        partial = getattr(exc, "partial", None)
        if isinstance(partial, DisplacementField):
            writer.put("partial_field", f"{name}_partial_field.raw", io.write_field, partial)
        writer.flush()
        if isinstance(exc, SolverError):
            raise SolverError(f"stage {name!r}: {exc}", partial=partial, stage=name) from exc
        raise ValidationError(f"stage {name!r}: {exc}") from exc
    writer.flush()


def _as_mask(data, threshold, polarity) -> BinaryMask:
    if isinstance(data, BinaryMask):
        return data
    if isinstance(data, ScalarField):
        return threshold_mask(data, threshold, polarity)
    raise ValidationError(f"expected an image or mask, got {type(data).__name__}")


def _as_image(data) -> ScalarField:
    if isinstance(data, ScalarField):
        return data
    return ScalarField(data.grid, data.bits.astype(float))


def resample_to(data, grid: GridSpec):
    """Multilinear resampling of an image or mask onto ``grid``."""
    if data.grid.dims == grid.dims:
        return data
    if data.grid.ndim != grid.ndim:
        raise ValidationError("cannot resample across dimensions")
    src = _as_image(data)
    vals = sample(src.grid, src.flat, grid.node_points())
    if isinstance(data, BinaryMask):
        return BinaryMask(grid, vals >= 0.5)
    return ScalarField(grid, vals)


def _register(template, sdf, params):
    """Affine then non-rigid; returns (affine, field, stage reports)."""
    affine = register_parametric(template, sdf, params)
    u0 = affine_to_displacement(affine, sdf.grid)
    u, reports = register_nonrigid(template, sdf, u0, params, return_report=True)
    return affine, u, reports


def _stage_rows(prefix, reports):
    rows = []
    for k, rep in enumerate(reports):
        row = {"stage": f"{prefix}{k}"}
        row.update(rep.to_dict())
        rows.append(row)
    return rows


def _contour_hd(contour: Contour, mask: BinaryMask):
    h = mask.grid.cell_width
    sym, ab, ba = hausdorff(contour, mask)
    return {"hd_sym": sym, "hd_contour_to_mask": ab, "hd_mask_to_contour": ba,
            "hd_sym_cells": sym / h}


def run_2d_pipeline(reference_image, template, params: RegistrationParams, *,
                    threshold: float = 0.5, polarity: str = "above",
                    init: Optional[Contour] = None, segment_params: RegistrationParams = None,
                    reference_gt: BinaryMask = None, template_gt: BinaryMask = None,
                    blend_alpha: float = 0.5, resample: bool = False,
                    out_dir=None) -> PipelineReport:
    """Two-modality 2D workflow.

    ``template`` is either a second image/mask or a contour:

    * image or mask: the reference is thresholded and segmented from
      ``init`` (default: small centred circle) with ``segment_params``; the
      segmented contour is then registered to the thresholded template, the
      template image is pulled back into the reference frame and blended with
      the reference.
    * contour: segmentation is skipped and the contour is registered to the
      thresholded reference directly; the reference image is pulled back
      through the result.

    ``reference_gt`` / ``template_gt`` add Dice and Hausdorff rows against
    ground-truth masks.
    """
    segment_params = params if segment_params is None else segment_params
    config = {"params": params.to_dict(), "segment_params": segment_params.to_dict(),
              "threshold": threshold, "polarity": polarity, "blend_alpha": blend_alpha,
              "resample": bool(resample)}
    report = PipelineReport("2d", config)
    out = _Writer(out_dir, report)
    ref_grid = reference_image.grid
    if ref_grid.ndim != 2:
        raise ValidationError("run_2d_pipeline needs 2D inputs")

    with _stage("prepare", report, out):
        if not isinstance(template, Contour) and template.grid.dims != ref_grid.dims:
            if not resample:
                raise ValidationError(f"grid mismatch: reference {ref_grid.dims} vs "
                                      f"template {template.grid.dims} (enable resampling)")
            template = resample_to(template, ref_grid)
        for name, gt in (("reference_gt", reference_gt), ("template_gt", template_gt)):
            if gt is not None and gt.grid.dims != ref_grid.dims:
                raise ValidationError(f"{name} grid {gt.grid.dims} differs from {ref_grid.dims}")
        ref_mask = _as_mask(reference_image, threshold, polarity)
        ref_mask.require_mixed()
        out.put("reference_mask", "reference_mask.pgm", io.write_mask, ref_mask)

    if isinstance(template, Contour):
        contour, target_mask, moving = template, ref_mask, reference_image
        fixed = None
    else:
        with _stage("segment", report, out):
            init = make_circle_contour() if init is None else init
            sdf_ref = signed_distance_transform(ref_mask)
            if np.any(sdf_ref.value(init.points) > 0.0):
                report.warnings.append("initial contour is not entirely inside the mask")
            _, u_seg, seg_reports = _register(init, sdf_ref, segment_params)
            contour = init.with_points(deform_points(init.points, u_seg))
            report.stages.extend(_stage_rows("segment_", seg_reports))
            report.metrics["segmentation"] = {"dice_vs_threshold": dice(rasterize(contour, ref_grid), ref_mask)}
            if reference_gt is not None:
                report.metrics["segmentation"]["dice_vs_gt"] = dice(rasterize(contour, ref_grid), reference_gt)
                report.metrics["segmentation"].update(_contour_hd(contour, reference_gt))
            out.put("segmented_contour", "segmented_contour.json", io.write_contour, contour)
        target_mask = _as_mask(template, threshold, polarity)
        moving, fixed = template, reference_image

    with _stage("register", report, out):
        target_mask.require_mixed()
        sdf = signed_distance_transform(target_mask)
        dice_init = dice(rasterize(contour, ref_grid), target_mask)
        affine, u, reports = _register(contour, sdf, params)
        after_affine = contour.with_points(affine.apply(contour.points))
        registered = contour.with_points(deform_points(contour.points, u))
        report.stages.extend(_stage_rows("register_", reports))
        crossings = self_intersections(registered)
        if crossings:
            report.warnings.append(f"registered contour self-intersects at segments {crossings[:10]}")
        disp = deform_points(contour.points, u) - contour.points
        reg = {
            "dice_initial": dice_init,
            "dice_parametric": dice(rasterize(after_affine, ref_grid), target_mask),
            "dice_final": dice(rasterize(registered, ref_grid), target_mask),
            "mean_displacement": disp.mean(axis=0).tolist(),
            "mean_abs_distance": float(np.abs(sdf.value(registered.points)).mean()),
        }
        reg.update(_contour_hd(registered, target_mask))
        if template_gt is not None:
            reg["dice_vs_gt"] = dice(rasterize(registered, ref_grid), template_gt)
            reg.update({f"gt_{k}": v for k, v in _contour_hd(registered, template_gt).items()})
        report.metrics["registration"] = reg
        out.put("affine", "affine.json", io.write_affine, affine)
        out.put("field", "field.raw", io.write_field, u)
        out.put("registered_contour", "registered_contour.json", io.write_contour, registered)
        out.put("trace", "trace.csv", io.write_trace_csv, reports)

    with _stage("warp", report, out):
        warped = pullback_warp(_as_image(moving), u)
        out.put("warped", "warped.pgm", io.write_pgm, _clip01(warped))
        if fixed is not None:
            mixed = blend(_as_image(fixed), warped, blend_alpha)
            out.put("blend", "blend.pgm", io.write_pgm, _clip01(mixed))
    report.status = "ok"
    out.flush()
    return report


def _clip01(img: ScalarField) -> ScalarField:
    return ScalarField(img.grid, np.clip(img.values, 0.0, 1.0))


def distance_colors(dist, scale) -> np.ndarray:
    """Blue (0) to red (``>= scale``) ramp for per-vertex distances."""
    s = np.clip(np.asarray(dist) / scale, 0.0, 1.0)
    return np.stack([s, 1.0 - np.abs(2.0 * s - 1.0), 1.0 - s], axis=1)


def write_colored_obj(path, mesh: TriMesh, dist, scale):
    """OBJ with the common ``v x y z r g b`` vertex-colour extension."""
    rgb = distance_colors(dist, scale)
    lines = [f"v {v[0]!r} {v[1]!r} {v[2]!r} {c[0]:.6f} {c[1]:.6f} {c[2]:.6f}"
             for v, c in zip(mesh.vertices.tolist(), rgb)]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _surface_metrics(mesh: TriMesh, reference, sdf, voxel) -> dict:
    ab = directed_distances(mesh, reference)
    ba = directed_distances(reference, mesh)
    quad = template_quadrature(mesh)
    d = np.abs(surface_distances(quad.positions, sdf))
    return {
        "hd_template_to_reference": float(ab.max()),
        "hd_reference_to_template": float(ba.max()),
        "hd_template_to_reference_voxels": float(ab.max()) / voxel,
        "hd_reference_to_template_voxels": float(ba.max()) / voxel,
        "hd99_template_to_reference": nearest_rank(ab, 99.0),
        "hd99_reference_to_template": nearest_rank(ba, 99.0),
        "hd99_template_to_reference_voxels": nearest_rank(ab, 99.0) / voxel,
        "hd99_reference_to_template_voxels": nearest_rank(ba, 99.0) / voxel,
        "mean_abs_distance": float(d.mean()),
        "mean_abs_distance_voxels": float(d.mean()) / voxel,
    }


def run_3d_pipeline(reference, template_mesh: TriMesh, params: RegistrationParams, *,
                    threshold: float = 0.5, polarity: str = "above",
                    reference_mesh: TriMesh = None, out_dir=None,
                    color_scale_voxels: float = 3.0) -> PipelineReport:
    """Register a surface mesh to a volume mask and evaluate it.

    Per stage (initial, affine, each non-rigid lambda) a distance-coloured
    OBJ and a per-vertex CSV of ``|d(phi(c))|`` are written.  Surface
    distances use ``reference_mesh`` when given, otherwise the boundary nodes
    of the reference mask.
    """
    config = {"params": params.to_dict(), "threshold": threshold, "polarity": polarity}
    report = PipelineReport("3d", config)
    out = _Writer(out_dir, report)
    grid = reference.grid
    if grid.ndim != 3:
        raise ValidationError("run_3d_pipeline needs a 3D volume")
    voxel = grid.cell_width
    scale = color_scale_voxels * voxel

    def snapshot(key, mesh, sdf):
        if out.dir is None:
            return
        d = np.abs(sdf.value(mesh.vertices))
        write_colored_obj(out.dir / f"{key}.obj", mesh, d, scale)
        io.write_scalar_csv(out.dir / f"{key}_distance.csv", "abs_distance", d)
        report.artifacts[key] = f"{key}.obj"
        report.artifacts[f"{key}_distance"] = f"{key}_distance.csv"

    with _stage("prepare", report, out):
        mask = _as_mask(reference, threshold, polarity)
        mask.require_mixed()
        v = template_mesh.vertices
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValidationError("template mesh leaves the unit cube")
        sdf = signed_distance_transform(mask)
        ref_geom = reference_mesh if reference_mesh is not None else boundary_nodes(mask)
        report.metrics["initial"] = {"dice": dice(rasterize(template_mesh, grid), mask)}
        report.metrics["initial"].update(_surface_metrics(template_mesh, ref_geom, sdf, voxel))
        out.put("reference_mask", "reference_mask.raw", io.write_mask, mask)
        snapshot("mesh_initial", template_mesh, sdf)

    with _stage("parametric", report, out):
        affine = register_parametric(template_mesh, sdf, params)
        moved = template_mesh.with_vertices(affine.apply(template_mesh.vertices))
        report.metrics["parametric"] = {"dice": dice(rasterize(moved, grid), mask)}
        report.metrics["parametric"].update(_surface_metrics(moved, ref_geom, sdf, voxel))
        out.put("affine", "affine.json", io.write_affine, affine)
        snapshot("mesh_parametric", moved, sdf)

    with _stage("nonrigid", report, out):
        def on_stage(k, lam, u):
            snapshot(f"mesh_stage{k}", template_mesh.with_vertices(
                deform_points(template_mesh.vertices, u)), sdf)

        u0 = affine_to_displacement(affine, grid)
        u, reports = register_nonrigid(template_mesh, sdf, u0, params, return_report=True,
                                       stage_callback=on_stage)
        final = template_mesh.with_vertices(deform_points(template_mesh.vertices, u))
        report.stages.extend(_stage_rows("nonrigid_", reports))
        report.metrics["final"] = {"dice": dice(rasterize(final, grid), mask)}
        report.metrics["final"].update(_surface_metrics(final, ref_geom, sdf, voxel))
        report.metrics["voxel_width"] = voxel
        out.put("field", "field.raw", io.write_field, u)
        out.put("registered_mesh", "registered_mesh.obj", io.write_obj, final)
        out.put("trace", "trace.csv", io.write_trace_csv, reports)
    report.status = "ok"
    out.flush()
    return report


# -- batch ---------------------------------------------------------------------

def _run_case(case: dict) -> dict:
    kind = case["kind"]
    params = case["params"]
    kwargs = dict(case.get("options", {}))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if kind == "2d":
                rep = run_2d_pipeline(case["reference"], case["template"], params,
                                      out_dir=case.get("out_dir"), **kwargs)
            elif kind == "3d":
                rep = run_3d_pipeline(case["reference"], case["template"], params,
                                      out_dir=case.get("out_dir"), **kwargs)
            else:
                raise ValidationError(f"unknown case kind {kind!r}")
    except (SolverError, ValidationError) as exc:
        return {"name": case.get("name"), "status": "failed", "error": str(exc)}
    return {"name": case.get("name"), **rep.to_dict()}


def run_batch(cases, workers: int = 1) -> list:
    """Run independent cases, each a dict with ``kind`` ("2d"/"3d"),
    ``reference``, ``template``, ``params`` and optional ``out_dir``,
    ``options`` and ``name``.  Results keep the input order."""
    cases = list(cases)
    if workers <= 1 or len(cases) <= 1:
        return [_run_case(c) for c in cases]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_case, cases))
