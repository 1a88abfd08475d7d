"""Even-odd rasterisation of closed contours and closed triangle meshes at grid nodes."""

from __future__ import annotations

import numpy as np

from .core import BinaryMask, Contour, GridSpec, TriMesh, ValidationError

# rays are nudged off the node lattice so they never pass exactly through
# a vertex or along an edge of a lattice-aligned surface
_RAY_OFFSET = (7.3e-10, 4.1e-10)


def rasterize_contour(contour: Contour, grid: GridSpec) -> BinaryMask:
    """Nodes inside the closed polygon by the even-odd rule.

    Each grid row casts a ray in ``+x``; an edge counts when the row lies in
    its half-open ``y`` range ``[min, max)``.
    """
    if grid.ndim != 2:
        raise ValidationError("contour rasterisation needs a 2D grid")
    if not contour.closed:
        raise ValidationError("only closed contours have an interior")
    a, b = contour.segments()
    xs, ys = grid.axes()
    inside = np.zeros(grid.dims, dtype=bool)
    y0, y1 = a[:, 1], b[:, 1]
    lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
    for j, y in enumerate(ys):
        hit = (lo <= y) & (y < hi)
        if not np.any(hit):
            continue
        t = (y - y0[hit]) / (y1[hit] - y0[hit])
        xi = np.sort(a[hit, 0] + t * (b[hit, 0] - a[hit, 0]))
        # number of crossings strictly left of or at each node
        count = np.searchsorted(xi, xs, side="right")
        inside[:, j] = (count % 2) == 1
    return BinaryMask(grid, inside)


def rasterize_mesh(mesh: TriMesh, grid: GridSpec) -> BinaryMask:
    """Nodes inside a closed triangle mesh by ``x``-ray parity.

    For every ``(y, z)`` node column the crossings with all triangles are
    found through barycentric tests in the ``yz`` projection; the parity of
    crossings left of a node decides membership.
    """
    if grid.ndim != 3:
        raise ValidationError("mesh rasterisation needs a 3D grid")
    dims = np.asarray(grid.dims)
    P0, P1, P2 = mesh.corners()
    toggles = np.zeros((dims[0] + 1, dims[1], dims[2]), dtype=np.int32)
    scale = dims - 1.0
    yz = [P[:, 1:] for P in (P0, P1, P2)]
    lo = np.minimum(np.minimum(yz[0], yz[1]), yz[2])
    hi = np.maximum(np.maximum(yz[0], yz[1]), yz[2])
    off = np.asarray(_RAY_OFFSET)
    jlo = np.clip(np.ceil((lo - off) * scale[1:]).astype(int), 0, dims[1:] - 1)
    jhi = np.clip(np.floor((hi - off) * scale[1:]).astype(int), -1, dims[1:] - 1)
    ny = np.maximum(jhi[:, 0] - jlo[:, 0] + 1, 0)
    nz = np.maximum(jhi[:, 1] - jlo[:, 1] + 1, 0)
    count = ny * nz
    tri = np.repeat(np.arange(len(count)), count)
    if len(tri) == 0:
        return BinaryMask(grid, np.zeros(grid.dims, dtype=bool))
    start = np.concatenate([[0], np.cumsum(count)[:-1]])
    local = np.arange(len(tri)) - start[tri]
    jy = jlo[tri, 0] + local % ny[tri]
    jz = jlo[tri, 1] + local // ny[tri]
    py = jy / scale[1] + off[0]
    pz = jz / scale[2] + off[1]

    a, b, c = P0[tri], P1[tri], P2[tri]
    e1y, e1z = b[:, 1] - a[:, 1], b[:, 2] - a[:, 2]
    e2y, e2z = c[:, 1] - a[:, 1], c[:, 2] - a[:, 2]
    det = e1y * e2z - e1z * e2y
    ok = det != 0.0
    qy, qz = py - a[:, 1], pz - a[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (qy * e2z - qz * e2y) / det
        t = (e1y * qz - e1z * qy) / det
        ok &= (s >= 0.0) & (t >= 0.0) & (s + t <= 1.0)
    s, t = s[ok], t[ok]
    a, b, c = a[ok], b[ok], c[ok]
    xhit = a[:, 0] + s * (b[:, 0] - a[:, 0]) + t * (c[:, 0] - a[:, 0])
    # first node index with x >= xhit
    k = np.clip(np.ceil(xhit * scale[0]).astype(int), 0, dims[0])
    np.add.at(toggles, (k, jy[ok], jz[ok]), 1)
    parity = np.cumsum(toggles, axis=0)[:-1] % 2
    return BinaryMask(grid, parity == 1)


def rasterize(boundary, grid: GridSpec) -> BinaryMask:
    if isinstance(boundary, Contour):
        return rasterize_contour(boundary, grid)
    if isinstance(boundary, TriMesh):
        return rasterize_mesh(boundary, grid)
    raise ValidationError(f"cannot rasterise {type(boundary).__name__}")
