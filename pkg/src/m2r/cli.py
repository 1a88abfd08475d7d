"""Command-line interface.

Exit codes: 0 success, 1 validation failure, 2 solver failure.  Failures
print one JSON object on a single line of standard error::

    {"error": "validation", "message": "...", "stage": null}
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER = 0, 1, 2

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _add_params(p):
    p.add_argument("--preset", help="parameter preset (qlf, dp, hips, shapes, brain)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--lambdas", type=float, nargs="+", metavar="L",
                   help="decreasing lambda schedule")
    p.add_argument("--max-gn-iters", type=int)
    p.add_argument("--backend", choices=("auto", "direct", "iterative"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m2r", description="Mesh-to-raster registration tools.")
    parser.add_argument("--seed", type=int, default=0, help="seed for stochastic synth output")
    parser.add_argument("--threads", type=int, help="cap on numerical worker threads")
    parser.add_argument("--config", help="JSON file with parameter values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sdf", help="signed distance field of a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="segment a 2D mask from an initial contour")
    p.add_argument("--mask", required=True)
    p.add_argument("--init", default="circle", help="'circle' or 'contour:FILE'")
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--points", type=int, default=128)
    p.add_argument("--out-contour", required=True)
    p.add_argument("--out-field")
    _add_params(p)

    p = sub.add_parser("register2d", help="register a contour to a 2D mask or image")
    p.add_argument("--template", required=True, help="contour JSON, or a second image/mask")
    p.add_argument("--reference", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--polarity", choices=("above", "below"), default="above")
    p.add_argument("--reference-gt")
    p.add_argument("--template-gt")
    p.add_argument("--blend-alpha", type=float, default=0.5)
    p.add_argument("--resample", action="store_true")
    p.add_argument("--out-dir", required=True)
    _add_params(p)

    p = sub.add_parser("register3d", help="register a surface mesh to a volume")
    p.add_argument("--template", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--dims", type=int, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--reference-mesh")
    p.add_argument("--out-dir", required=True)
    _add_params(p)

    p = sub.add_parser("warp", help="pull an image back through a field or affine map")
    p.add_argument("--image", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("blend", help="alpha-blend two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("staple", help="consensus mask from several raters")
    p.add_argument("--raters", nargs="+", required=True)
    p.add_argument("--prior", default="auto")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("metrics", help="Dice and Hausdorff distances")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--field", help="deform A through this field first")
    p.add_argument("--case", default="case")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic test case")
    p.add_argument("--shape", required=True,
                   choices=("disk", "square", "sphere", "ellipsoid", "brain-case"))
    p.add_argument("--params", default="{}", help="JSON text or file")
    p.add_argument("--out-dir", required=True)
    return parser


# -- helpers -------------------------------------------------------------------

def _json_arg(text: str) -> dict:
    from .core import ValidationError

    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON parameters: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError("JSON parameters must be an object")
    return data


def _params(args):
    from .pipeline import resolve_params

    config = _json_arg(args.config) if args.config else {}
    overrides = {"alpha": args.alpha, "mu": args.mu, "lambda_schedule": args.lambdas,
                 "max_gn_iters": args.max_gn_iters, "backend": args.backend}
    return resolve_params(args.preset, config, overrides)


def _load_geometry(path):
    """Contour (.json), mesh (.obj) or mask (anything else)."""
    from . import io

    suffix = os.path.splitext(path)[1].lower()
    if suffix == ".json":
        return io.read_contour(path)
    if suffix == ".obj":
        return io.read_obj(path)
    return io.read_mask(path)


def _load_deformation(path):
    from . import io

    if os.path.splitext(path)[1].lower() == ".json":
        return io.read_affine(path)
    return io.read_field(path)


def _write_image(path, img):
    from . import io

    if os.path.splitext(path)[1].lower() == ".pgm":
        io.write_pgm(path, img)
    else:
        io.write_field(path, img)


# -- commands ------------------------------------------------------------------

def cmd_sdf(args):
    from . import io
    from .distance import signed_distance_transform

    sdf = signed_distance_transform(io.read_mask(args.mask))
    io.write_field(args.out, sdf.field)


def cmd_segment(args):
    from . import io
    from .segmentation import make_circle_contour, segment_roi
    from .core import ValidationError

    mask = io.read_mask(args.mask)
    if args.init == "circle":
        init = make_circle_contour((0.5, 0.5), args.radius, args.points)
    elif args.init.startswith("contour:"):
        init = io.read_contour(args.init.split(":", 1)[1])
    else:
        raise ValidationError(f"--init must be 'circle' or 'contour:FILE', got {args.init!r}")
    contour, field = segment_roi(init, mask, _params(args))
    io.write_contour(args.out_contour, contour)
    if args.out_field:
        io.write_field(args.out_field, field)


def cmd_register2d(args):
    from . import io
    from .pipeline import run_2d_pipeline

    reference = io.read_image(args.reference)
    if args.template.lower().endswith(".json"):
        template = io.read_contour(args.template)
    else:
        template = io.read_image(args.template)
    gt = {k: io.read_mask(v) for k, v in (("reference_gt", args.reference_gt),
                                           ("template_gt", args.template_gt)) if v}
    run_2d_pipeline(reference, template, _params(args), threshold=args.threshold,
                    polarity=args.polarity, blend_alpha=args.blend_alpha,
                    resample=args.resample, out_dir=args.out_dir, **gt)


def _read_volume(path, dims):
    from . import io
    from .core import GridSpec, ScalarField, ValidationError
    import numpy as np

    if io.sidecar_path(path).exists():
        vol = io.read_mask(path) if io.read_header(path).get("dtype") == "uint8" else io.read_image(path)
        if dims and tuple(dims) != vol.grid.dims:
            raise ValidationError(f"--dims {tuple(dims)} disagree with sidecar dims {vol.grid.dims}")
        return vol
    if not dims:
        raise ValidationError(f"{path}: no sidecar; pass --dims X Y Z")
    grid = GridSpec(tuple(dims))
    data = np.fromfile(path, dtype="<f4")
    if data.size != grid.num_nodes:
        raise ValidationError(f"{path}: expected {grid.num_nodes} float32 values, found {data.size}")
    return ScalarField(grid, data.astype(float))


def cmd_register3d(args):
    from . import io
    from .pipeline import run_3d_pipeline

    reference = _read_volume(args.reference, args.dims)
    ref_mesh = io.read_obj(args.reference_mesh) if args.reference_mesh else None
    run_3d_pipeline(reference, io.read_obj(args.template), _params(args),
                    threshold=args.threshold, reference_mesh=ref_mesh, out_dir=args.out_dir)


def cmd_warp(args):
    from . import io
    from .warp import pullback_warp

    _write_image(args.out, pullback_warp(io.read_image(args.image), _load_deformation(args.field)))


def cmd_blend(args):
    from . import io
    from .warp import blend

    _write_image(args.out, blend(io.read_image(args.a), io.read_image(args.b), args.alpha))


def cmd_staple(args):
    from pathlib import Path
    from . import io
    from .core import ScalarField
    from .staple import RaterStack, staple_estimate

    prior = args.prior if args.prior == "auto" else float(args.prior)
    stack = RaterStack.from_masks(io.read_mask(r) for r in args.raters)
    res = staple_estimate(stack, prior=prior, max_iters=args.max_iters)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    two_d = stack.grid.ndim == 2
    io.write_mask(out / ("gt_mask.pgm" if two_d else "gt_mask.raw"), res.gt_mask)
    io.write_field(out / "weights.raw", ScalarField(stack.grid, res.weights))
    io.write_json(out / "staple.json", {
        "schema_version": 1,
        "raters": list(args.raters),
        "sensitivity": res.sensitivity.tolist(),
        "specificity": res.specificity.tolist(),
        "prior": res.prior,
        "iterations": res.iterations,
        "converged": res.converged,
        "log_likelihood": res.log_likelihood,
    })


def cmd_metrics(args):
    from . import io
    from .core import BinaryMask, Contour, ValidationError
    from .data_term import deform_points
    from .metrics import MetricRow, hausdorff, hausdorff_percentile, dice
    from .raster import rasterize

    a, b = _load_geometry(args.a), _load_geometry(args.b)
    if args.field:
        if isinstance(a, BinaryMask):
            raise ValidationError("--field needs A to be a contour or mesh")
        deform = _load_deformation(args.field)
        pts = a.points if isinstance(a, Contour) else a.vertices
        moved = deform_points(pts, deform)
        a = a.with_points(moved) if isinstance(a, Contour) else a.with_vertices(moved)
    masks = [g for g in (a, b) if isinstance(g, BinaryMask)]
    dc = float("nan")
    if masks:
        grid = masks[0].grid
        ma = a if isinstance(a, BinaryMask) else rasterize(a, grid)
        mb = b if isinstance(b, BinaryMask) else rasterize(b, grid)
        dc = dice(ma, mb)
    sym, ab, ba = hausdorff(a, b)
    p99 = hausdorff_percentile(a, b, 99.0)
    io.write_metrics_csv(args.out, [MetricRow(args.case, dc, sym, ab, ba, p99)])


def cmd_synth(args):
    from pathlib import Path
    from . import io
    from .synth import brain_case, flip_raters, primitive
    from .core import ScalarField

    params = _json_arg(args.params)
    raters = params.pop("raters", None)
    dims = params.pop("dims", 257 if args.shape in ("disk", "square") else 65)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.shape == "brain-case":
        mask, ref_mesh, template = brain_case(dims=dims, **params)
        io.write_mask(out / "reference_mask.raw", mask)
        io.write_obj(out / "reference.obj", ref_mesh)
        io.write_obj(out / "template.obj", template)
    else:
        mask, boundary = primitive(args.shape, dims=dims, **params)
        if mask.grid.ndim == 2:
            io.write_mask(out / "mask.pgm", mask)
            io.write_contour(out / "boundary.json", boundary)
        else:
            io.write_mask(out / "mask.raw", mask)
            io.write_field(out / "volume.raw", ScalarField(mask.grid, mask.bits.astype(float)))
            io.write_obj(out / "boundary.obj", boundary)
    if raters:
        ext = ".pgm" if mask.grid.ndim == 2 else ".raw"
        for k, r in enumerate(flip_raters(mask, [tuple(v) for v in raters], seed=args.seed)):
            io.write_mask(out / f"rater{k}{ext}", r)


COMMANDS = {
    "sdf": cmd_sdf, "segment": cmd_segment, "register2d": cmd_register2d,
    "register3d": cmd_register3d, "warp": cmd_warp, "blend": cmd_blend,
    "staple": cmd_staple, "metrics": cmd_metrics, "synth": cmd_synth,
}


def _fail(kind: str, message: str, stage=None) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "stage": stage}) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    import scipy.fft
    from .core import SolverError, ValidationError

    try:
        with scipy.fft.set_workers(args.threads or 1):
            COMMANDS[args.command](args)
    except ValidationError as exc:
        _fail("validation", str(exc))
        return EXIT_VALIDATION
    except OSError as exc:
        _fail("validation", f"{type(exc).__name__}: {exc}")
        return EXIT_VALIDATION
    except SolverError as exc:
        _fail("solver", str(exc), exc.stage)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
