"""File formats.

* 2D images and masks: binary PGM (P5, 8 bit).  File row ``r`` holds grid
  row ``y = r``; images are stored as ``round(255 * clip(v, 0, 1))``.
* Fields and volumes: raw little-endian float32, x-fastest, component-major,
  with a JSON sidecar ``{dims, spacing, components, dtype}`` next to it
  (full file name plus ``.json``, e.g. ``field.raw.json``).  3D masks use the same layout with uint8.
* Meshes: Wavefront OBJ (``v`` and 1-based ``f`` records).
* Contours, affine maps, configs and reports: JSON with fixed key order.
* Metrics and optimisation traces: CSV.

All writers are byte-deterministic for fixed inputs.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .core import (AffineMap, BinaryMask, Contour, DisplacementField, GridSpec, ScalarField,
                   TriMesh, ValidationError)


def _path(p) -> Path:
    return Path(p)


def sidecar_path(path) -> Path:
    path = _path(path)
    return path.with_name(path.name + ".json")


def dumps_json(obj) -> str:
    """Deterministic JSON text (insertion key order, 2-space indent)."""
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def write_json(path, obj):
    _path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(_path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


# -- PGM ---------------------------------------------------------------------

def _pgm_bytes(values: np.ndarray) -> bytes:
    width, height = values.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    # rows of the file are y, columns x
    return header + np.ascontiguousarray(values.T).astype(np.uint8).tobytes()


def write_pgm(path, data):
    """Write a 2D :class:`ScalarField` (values in [0, 1]) or :class:`BinaryMask`."""
    if isinstance(data, BinaryMask):
        vals = np.where(data.bits, 255, 0)
    elif isinstance(data, ScalarField):
        vals = np.rint(255.0 * np.clip(data.values, 0.0, 1.0))
    else:
        raise ValidationError("write_pgm needs a ScalarField or BinaryMask")
    if vals.ndim != 2:
        raise ValidationError("PGM holds 2D data only")
    _path(path).write_bytes(_pgm_bytes(vals))


def _read_pgm_raw(path) -> np.ndarray:
    raw = _path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValidationError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    if data.size != width * height:
        raise ValidationError(f"{path}: PGM payload too short")
    return data.reshape(height, width).T


def read_pgm_image(path) -> ScalarField:
    vals = _read_pgm_raw(path)
    return ScalarField(GridSpec(vals.shape), vals.astype(float) / 255.0)


def read_pgm_mask(path, threshold: int = 128) -> BinaryMask:
    vals = _read_pgm_raw(path)
    return BinaryMask(GridSpec(vals.shape), vals >= threshold)


# -- raw + sidecar -----------------------------------------------------------

def _write_raw(path, flat: np.ndarray, grid: GridSpec, components: int, dtype: str):
    path = _path(path)
    path.write_bytes(flat.astype("<f4" if dtype == "float32" else "u1").tobytes())
    write_json(sidecar_path(path), {
        "dims": list(grid.dims),
        "spacing": list(grid.spacing),
        "components": components,
        "dtype": dtype,
    })


def write_field(path, data):
    """Raw float32 for :class:`ScalarField` or :class:`DisplacementField`."""
    if isinstance(data, DisplacementField):
        _write_raw(path, data.as_vector(), data.grid, data.grid.ndim, "float32")
    elif isinstance(data, ScalarField):
        _write_raw(path, data.flat, data.grid, 1, "float32")
    else:
        raise ValidationError("write_field needs a ScalarField or DisplacementField")


def write_mask(path, mask: BinaryMask):
    """PGM for 2D masks, raw uint8 plus sidecar otherwise."""
    path = _path(path)
    if mask.grid.ndim == 2 and path.suffix.lower() == ".pgm":
        write_pgm(path, mask)
    else:
        _write_raw(path, mask.flat.astype(np.uint8), mask.grid, 1, "uint8")


def read_header(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        raise ValidationError(f"{path}: missing sidecar {side.name}")
    meta = read_json(side)
    for key in ("dims", "components"):
        if key not in meta:
            raise ValidationError(f"{side}: missing key {key!r}")
    return meta


def _read_raw(path, meta=None):
    meta = read_header(path) if meta is None else meta
    grid = GridSpec(tuple(meta["dims"]), tuple(meta["spacing"]) if meta.get("spacing") else None)
    dtype = "<f4" if meta.get("dtype", "float32") == "float32" else "u1"
    data = np.fromfile(_path(path), dtype=dtype)
    expected = grid.num_nodes * int(meta["components"])
    if data.size != expected:
        raise ValidationError(f"{path}: expected {expected} values, found {data.size}")
    return grid, data, meta


def read_field(path):
    """:class:`ScalarField` (1 component) or :class:`DisplacementField`."""
    grid, data, meta = _read_raw(path)
    data = data.astype(float)
    if int(meta["components"]) == 1:
        return ScalarField(grid, data)
    if int(meta["components"]) != grid.ndim:
        raise ValidationError(f"{path}: {meta['components']} components on a {grid.ndim}D grid")
    return DisplacementField.from_vector(grid, data)


def read_mask(path, threshold: float = 0.5) -> BinaryMask:
    """Mask from PGM, raw uint8 or raw float32 (values ``>= threshold``)."""
    path = _path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm_mask(path)
    grid, data, meta = _read_raw(path)
    if meta.get("dtype") == "uint8":
        return BinaryMask(grid, data != 0)
    return BinaryMask(grid, data.astype(float) >= threshold)


def read_image(path) -> ScalarField:
    path = _path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm_image(path)
    grid, data, meta = _read_raw(path)
    return ScalarField(grid, data.astype(float))


# -- meshes and contours -----------------------------------------------------

def write_obj(path, mesh: TriMesh, comment: str = None):
    buf = _io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    for v in mesh.vertices.tolist():
        buf.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
    for t in mesh.triangles:
        buf.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
    _path(path).write_text(buf.getvalue(), encoding="ascii")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line_no, line in enumerate(_path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
                continue
            if parts[0] != "f":
                continue
            idx = [int(p.split("/")[0]) for p in parts[1:]]
        except ValueError:
            raise ValidationError(f"{path}:{line_no}: malformed record {line.strip()!r}") from None
        if len(idx) < 3:
            raise ValidationError(f"{path}:{line_no}: face with fewer than 3 vertices")
        idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
        for k in range(1, len(idx) - 1):  # fan-triangulate polygons
            faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise ValidationError(f"{path}: OBJ has no vertices or faces")
    return TriMesh(np.array(verts), np.array(faces))


def write_scalar_csv(path, name: str, values):
    """Per-vertex scalar sidecar (``index,name``)."""
    rows = [("index", name)] + [(i, repr(float(v))) for i, v in enumerate(values)]
    write_csv(path, rows)


def contour_to_json(contour: Contour) -> dict:
    return {"closed": bool(contour.closed), "points": contour.points.tolist()}


def write_contour(path, contour: Contour):
    write_json(path, contour_to_json(contour))


def read_contour(path) -> Contour:
    data = read_json(path)
    if "points" not in data:
        raise ValidationError(f"{path}: contour JSON needs a 'points' list")
    return Contour(np.asarray(data["points"], dtype=float), bool(data.get("closed", True)))


def affine_to_json(affine: AffineMap) -> dict:
    return {"A": affine.A.tolist(), "t": affine.t.tolist()}


def write_affine(path, affine: AffineMap):
    write_json(path, affine_to_json(affine))


def read_affine(path) -> AffineMap:
    data = read_json(path)
    return AffineMap(np.asarray(data["A"], dtype=float), np.asarray(data["t"], dtype=float))


# -- CSV ---------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)]


def write_metrics_csv(path, rows):
    from .metrics import MetricRow

    write_csv(path, [MetricRow.HEADER] + [r.values() for r in rows])


def write_trace_csv(path, stage_reports):
    rows = [("stage", "iteration", "lambda", "E_match", "E_reg", "step")]
    for k, rep in enumerate(stage_reports):
        for it, em, er, step in rep.trace:
            rows.append((k, it, float(rep.lam), em, er, float(step)))
    write_csv(path, rows)
