"""Synthetic test cases: analytic deformations, rigid motions and primitive shapes."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .core import BinaryMask, Contour, GridSpec, TriMesh, ValidationError

CENTER3 = np.array([0.5, 0.5, 0.5])


def brain_deformation(x, beta: float) -> np.ndarray:
    """Quadratic displacement family used for the brain-style test.

    ``x`` may be a single 3-vector or an ``(m, 3)`` array.
    """
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    a, b, c = x1 - 0.5, x2 - 0.5, x3 - 0.5
    one = 1.0 - x1
    u1 = -beta * x1 * b + beta * one * a + beta * one * c
    u2 = beta * x1 * b + beta * one * b - beta * one * c
    u3 = -beta * x1 * c + beta * one * c
    return np.stack([u1, u2, u3], axis=-1)


def brain_deformation_jacobian(x, beta: float) -> np.ndarray:
    """``du_i / dx_j`` of :func:`brain_deformation`; shape ``(..., 3, 3)``."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    J = np.zeros(x.shape[:-1] + (3, 3))
    J[..., 0, 0] = beta * (-(x2 - 0.5) + (1.0 - x1) - (x1 - 0.5) - (x3 - 0.5))
    J[..., 0, 1] = -beta * x1
    J[..., 0, 2] = beta * (1.0 - x1)
    J[..., 1, 0] = beta * ((x2 - 0.5) - (x2 - 0.5) + (x3 - 0.5))
    J[..., 1, 1] = beta * x1 + beta * (1.0 - x1)
    J[..., 1, 2] = -beta * (1.0 - x1)
    J[..., 2, 0] = beta * (-(x3 - 0.5) - (x3 - 0.5))
    J[..., 2, 2] = -beta * x1 + beta * (1.0 - x1)
    return J


def rotation_matrix(theta) -> np.ndarray:
    """``Rz(theta[2]) @ Ry(theta[1]) @ Rx(theta[0])``."""
    tx, ty, tz = (float(v) for v in theta)
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    cz, sz = np.cos(tz), np.sin(tz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def rigid_body(x, t, theta) -> np.ndarray:
    """Rotate about the domain centre, then translate by ``t``."""
    x = np.asarray(x, dtype=float)
    R = rotation_matrix(theta)
    return (x - CENTER3) @ R.T + CENTER3 + np.asarray(t, dtype=float)


# -- meshes ------------------------------------------------------------------

@lru_cache(maxsize=8)
def _icosphere(level: int):
    p = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
         (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
         (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(q, dtype=float) / np.linalg.norm(q) for q in v]
    faces = f
    for _ in range(level):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def icosphere(level: int = 3):
    """Unit icosphere ``(vertices, triangles)`` with outward-facing triangles."""
    v, f = _icosphere(int(level))
    return v.copy(), f.copy()


def _check_inside(points, what):
    if np.any(points < 0.0) or np.any(points > 1.0):
        raise ValidationError(f"{what} exits the unit domain")


def sphere_mesh(center, radius, level=3) -> TriMesh:
    v, f = icosphere(level)
    verts = np.asarray(center, dtype=float) + radius * v
    _check_inside(verts, "sphere")
    return TriMesh(verts, f)


def ellipsoid_mesh(center, radii, level=3) -> TriMesh:
    v, f = icosphere(level)
    verts = np.asarray(center, dtype=float) + v * np.asarray(radii, dtype=float)
    _check_inside(verts, "ellipsoid")
    return TriMesh(verts, f)


def box_mesh(center, sides, n_per_side=8) -> TriMesh:
    """Axis-aligned box surface, each face split into an ``n x n`` grid of quads."""
    c = np.asarray(center, dtype=float)
    half = 0.5 * np.asarray(sides, dtype=float)
    s = np.linspace(-1.0, 1.0, n_per_side + 1)
    verts, tris = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            U, V = np.meshgrid(s, s, indexing="ij")
            P = np.zeros(U.shape + (3,))
            P[..., axis] = sign
            P[..., u_ax] = U
            P[..., v_ax] = V
            base = sum(len(b) for b in verts)
            verts.append(P.reshape(-1, 3))
            k = n_per_side + 1
            for i in range(n_per_side):
                for j in range(n_per_side):
                    a, b = base + i * k + j, base + (i + 1) * k + j
                    quad = [(a, b, b + 1), (a, b + 1, a + 1)]
                    # flip so normals face outwards
                    outward = sign if (u_ax, v_ax) in ((1, 2), (2, 0), (0, 1)) else -sign
                    tris += quad if outward > 0 else [t[::-1] for t in quad]
    V = np.concatenate(verts)
    # deduplicate shared edge vertices
    key = np.round(V * n_per_side).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    V = V[first] * half + c
    T = inverse.ravel()[np.array(tris)]
    _check_inside(V, "box")
    return TriMesh(V, T)


def blob_mesh(center=(0.5, 0.5, 0.5), radius=0.2, amplitude=0.15, level=4) -> TriMesh:
    """Smooth star-shaped closed surface ``r(n) = radius * (1 + amplitude * g(n))``."""
    v, f = icosphere(level)
    r = radius * (1.0 + amplitude * blob_profile(v))
    verts = np.asarray(center, dtype=float) + v * r[:, None]
    _check_inside(verts, "blob")
    return TriMesh(verts, f)


def blob_profile(n) -> np.ndarray:
    """Bounded smooth function on unit directions, values in ``[-1, 1]``."""
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    return np.clip(0.6 * x * y + 0.5 * (z * z - 0.33) + 0.4 * y * z * x * 3.0, -1.0, 1.0)


def blob_mask(grid: GridSpec, center=(0.5, 0.5, 0.5), radius=0.2, amplitude=0.15) -> BinaryMask:
    """Interior of :func:`blob_mesh` evaluated analytically at the grid nodes."""
    x = grid.node_points() - np.asarray(center, dtype=float)
    rho = np.linalg.norm(x, axis=1)
    n = x / np.maximum(rho, 1e-300)[:, None]
    n[rho == 0.0] = (1.0, 0.0, 0.0)
    return BinaryMask(grid, rho <= radius * (1.0 + amplitude * blob_profile(n)))


# -- 2D contours -------------------------------------------------------------

def circle_points(center, radius, n_points):
    ang = 2.0 * np.pi * np.arange(n_points) / n_points
    return np.asarray(center, dtype=float) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def square_points(center, side, n_per_side=32):
    """Counter-clockwise square starting at the lower-left corner."""
    c = np.asarray(center, dtype=float)
    h = 0.5 * side
    s = np.arange(n_per_side) / n_per_side
    corners = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    pts = [corners[k] + s[:, None] * (corners[(k + 1) % 4] - corners[k]) for k in range(4)]
    return c + np.concatenate(pts)


# -- primitives --------------------------------------------------------------

def _grid(dims, ndim):
    dims = (dims,) * ndim if np.isscalar(dims) else tuple(dims)
    if len(dims) != ndim:
        raise ValidationError(f"expected {ndim} grid dimensions, got {dims}")
    return GridSpec(dims)


def primitive(kind: str, dims=257, **params):
    """Mask plus analytic boundary for a primitive shape.

    Kinds and parameters (defaults in brackets):

    * ``disk``: center [(.5,.5)], radius [.25], n_points [256]
    * ``square``: center [(.5,.5)], side [.4], n_per_side [64]
    * ``sphere``: center [(.5,.5,.5)], radius [.25], level [3]
    * ``ellipsoid``: center, radii [(.3,.2,.15)], level [3]
    * ``box``: center, sides [(.4,.4,.4)], n_per_side [8]
    * ``blob``: center, radius [.2], amplitude [.15], level [4]
    """
    kind = kind.lower()
    if kind in ("disk", "square"):
        grid = _grid(dims, 2)
        c = np.asarray(params.get("center", (0.5, 0.5)), dtype=float)
        x = grid.node_points() - c
        if kind == "disk":
            r = float(params.get("radius", 0.25))
            pts = circle_points(c, r, int(params.get("n_points", 256)))
            _check_inside(c + np.array([[-r, -r], [r, r]]), "disk")
            mask = np.sum(x * x, axis=1) <= r * r
        else:
            side = float(params.get("side", 0.4))
            pts = square_points(c, side, int(params.get("n_per_side", 64)))
            _check_inside(pts, "square")
            mask = np.all(np.abs(x) <= 0.5 * side, axis=1)
        return BinaryMask(grid, mask), Contour(pts, closed=True)

    grid = _grid(dims, 3)
    c = np.asarray(params.get("center", (0.5, 0.5, 0.5)), dtype=float)
    x = grid.node_points() - c
    if kind == "sphere":
        r = float(params.get("radius", 0.25))
        mesh = sphere_mesh(c, r, int(params.get("level", 3)))
        mask = np.sum(x * x, axis=1) <= r * r
    elif kind == "ellipsoid":
        radii = np.asarray(params.get("radii", (0.3, 0.2, 0.15)), dtype=float)
        mesh = ellipsoid_mesh(c, radii, int(params.get("level", 3)))
        mask = np.sum((x / radii) ** 2, axis=1) <= 1.0
    elif kind == "box":
        sides = np.asarray(params.get("sides", (0.4, 0.4, 0.4)), dtype=float)
        mesh = box_mesh(c, sides, int(params.get("n_per_side", 8)))
        mask = np.all(np.abs(x) <= 0.5 * sides, axis=1)
    elif kind == "blob":
        r = float(params.get("radius", 0.2))
        a = float(params.get("amplitude", 0.15))
        mesh = blob_mesh(c, r, a, int(params.get("level", 4)))
        return blob_mask(grid, c, r, a), mesh
    else:
        raise ValidationError(f"unknown primitive {kind!r}")
    return BinaryMask(grid, mask), mesh


def brain_case(dims=129, beta=0.3, t=(0.0, 0.0, 0.1), theta=(0.1, 0.5, -0.03), level=4,
               radius=0.2, amplitude=0.15):
    """Reference blob mask plus the template mesh moved off it.

    The template vertices are first displaced by :func:`brain_deformation`
    and then moved by :func:`rigid_body`.

    Returns ``(reference_mask, reference_mesh, template_mesh)``.
    """
    grid = _grid(dims, 3)
    mesh = blob_mesh((0.5, 0.5, 0.5), radius, amplitude, level)
    v = mesh.vertices
    moved = rigid_body(v + brain_deformation(v, beta), t, theta)
    _check_inside(moved, "deformed template")
    return blob_mask(grid, (0.5, 0.5, 0.5), radius, amplitude), mesh, mesh.with_vertices(moved)


def flip_raters(truth: BinaryMask, rates, seed: int = 0):
    """Independent label flips: rater ``j`` keeps foreground with probability
    ``p_j`` and background with probability ``q_j``."""
    rng = np.random.default_rng(seed)
    gt = truth.bits
    out = []
    for p, q in rates:
        u = rng.random(gt.shape)
        out.append(BinaryMask(truth.grid, np.where(gt, u < p, u >= q)))
    return out
