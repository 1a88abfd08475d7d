"""Overlap and surface-distance metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .core import BinaryMask, Contour, GridSpec, TriMesh, ValidationError

# brute force below this many point/simplex pairs
_BRUTE_PAIRS = 4_000_000


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """``2 |A & B| / (|A| + |B|)``; 1 when both masks are empty."""
    if a.grid.dims != b.grid.dims:
        raise ValidationError(f"mask grids differ: {a.grid.dims} vs {b.grid.dims}")
    total = int(a.bits.sum()) + int(b.bits.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a.bits, b.bits).sum()) / total


def boundary_nodes(mask: BinaryMask) -> np.ndarray:
    """Coordinates of foreground nodes with a background face neighbour.

    Neighbours outside the grid count as background.
    """
    bits = np.pad(mask.bits, 1, constant_values=False)
    eroded = ndimage.binary_erosion(bits, structure=ndimage.generate_binary_structure(bits.ndim, 1))
    edge = (bits & ~eroded)[tuple(slice(1, -1) for _ in range(bits.ndim))]
    idx = np.argwhere(edge)
    return idx / (np.asarray(mask.grid.dims) - 1.0)


@dataclass(frozen=True)
class _Geometry:
    points: np.ndarray  # sample points (vertices)
    simplices: np.ndarray  # (k, s) vertex indices; s = 1 (points), 2, 3


def _geometry(obj, scale=None) -> _Geometry:
    if isinstance(obj, Contour):
        pts = obj.points
        n = len(pts)
        idx = np.arange(n)
        nxt = (idx + 1) % n
        simp = np.stack([idx, nxt], axis=1) if obj.closed else np.stack([idx[:-1], idx[1:]], axis=1)
    elif isinstance(obj, TriMesh):
        pts, simp = obj.vertices, obj.triangles
    elif isinstance(obj, BinaryMask):
        pts = boundary_nodes(obj)
        simp = np.arange(len(pts))[:, None]
    else:
        pts = np.atleast_2d(np.asarray(obj, dtype=float))
        simp = np.arange(len(pts))[:, None]
    if len(pts) == 0:
        raise ValidationError("distance query on an empty set")
    pts = np.asarray(pts, dtype=float)
    if scale is not None:
        pts = pts * np.asarray(scale, dtype=float)
    return _Geometry(pts, np.asarray(simp, dtype=np.int64))


def point_segment_distance(p, a, b) -> np.ndarray:
    """Row-wise distance from ``p`` to segment ``[a, b]``."""
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(np.where(denom > 0, t, 0.0), 0.0, 1.0)
    q = a + t[:, None] * ab
    return np.linalg.norm(p - q, axis=1)


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    """Row-wise distance from ``p`` to triangle ``abc`` (3D)."""
    e0, e1 = b - a, c - a
    nrm = np.cross(e0, e1)
    nn = np.einsum("ij,ij->i", nrm, nrm)
    ap = p - a
    # barycentric coordinates of the projection onto the plane
    d00 = np.einsum("ij,ij->i", e0, e0)
    d01 = np.einsum("ij,ij->i", e0, e1)
    d11 = np.einsum("ij,ij->i", e1, e1)
    d20 = np.einsum("ij,ij->i", ap, e0)
    d21 = np.einsum("ij,ij->i", ap, e1)
    den = d00 * d11 - d01 * d01
    safe = np.where(den > 0, den, 1.0)
    v = (d11 * d20 - d01 * d21) / safe
    w = (d00 * d21 - d01 * d20) / safe
    inside = (den > 0) & (v >= 0) & (w >= 0) & (v + w <= 1)
    plane = np.abs(np.einsum("ij,ij->i", ap, nrm)) / np.sqrt(np.where(nn > 0, nn, 1.0))
    edges = np.minimum(np.minimum(point_segment_distance(p, a, b),
                                  point_segment_distance(p, b, c)),
                       point_segment_distance(p, c, a))
    return np.where(inside, np.minimum(plane, edges), edges)


def _simplex_distance(p, geom: _Geometry, sidx) -> np.ndarray:
    s = geom.simplices[sidx]
    V = geom.points
    if s.shape[1] == 1:
        return np.linalg.norm(p - V[s[:, 0]], axis=1)
    if s.shape[1] == 2:
        return point_segment_distance(p, V[s[:, 0]], V[s[:, 1]])
    return point_triangle_distance(p, V[s[:, 0]], V[s[:, 1]], V[s[:, 2]])


def _brute_min(queries, geom: _Geometry) -> np.ndarray:
    k = len(geom.simplices)
    out = np.empty(len(queries))
    step = max(1, _BRUTE_PAIRS // max(k, 1))
    for s in range(0, len(queries), step):
        q = queries[s:s + step]
        P = np.repeat(q, k, axis=0)
        S = np.tile(np.arange(k), len(q))
        out[s:s + step] = _simplex_distance(P, geom, S).reshape(len(q), k).min(axis=1)
    return out


def _pruned_min(queries, geom: _Geometry) -> np.ndarray:
    V = geom.points
    simp = geom.simplices
    tree = cKDTree(V)
    r0, _ = tree.query(queries)
    if simp.shape[1] == 1:
        return r0
    # any point of a simplex is within its longest edge of one of its vertices
    edge = np.zeros(len(simp))
    for i in range(simp.shape[1]):
        j = (i + 1) % simp.shape[1]
        edge = np.maximum(edge, np.linalg.norm(V[simp[:, i]] - V[simp[:, j]], axis=1))
    reach = r0 + edge.max() * (1.0 + 1e-12) + 1e-15
    # vertex -> incident simplices
    owner = simp.ravel()
    which = np.repeat(np.arange(len(simp)), simp.shape[1])
    order = np.argsort(owner, kind="stable")
    starts = np.searchsorted(owner[order], np.arange(len(V) + 1))
    incident = which[order]
    out = np.empty(len(queries))
    balls = tree.query_ball_point(queries, reach)
    for i, verts in enumerate(balls):
        verts = np.asarray(verts, dtype=np.int64)
        cand = np.unique(np.concatenate([incident[starts[v]:starts[v + 1]] for v in verts]))
        P = np.broadcast_to(queries[i], (len(cand), queries.shape[1]))
        out[i] = min(r0[i], _simplex_distance(P, geom, cand).min())
    return out


def directed_distances(a, b, scale=None) -> np.ndarray:
    """Distance from every sample point of ``a`` to the nearest point of ``b``.

    ``a`` and ``b`` may be point arrays, :class:`Contour`, :class:`TriMesh`
    or :class:`BinaryMask` (boundary nodes).  Samples of ``a`` are its
    vertices; ``b`` is measured as a full polyline/surface.  ``scale``
    multiplies coordinates per axis first (for physical units).
    """
    ga, gb = _geometry(a, scale), _geometry(b, scale)
    if ga.points.shape[1] != gb.points.shape[1]:
        raise ValidationError("point sets have different dimensions")
    if len(ga.points) * len(gb.simplices) <= _BRUTE_PAIRS:
        return _brute_min(ga.points, gb)
    return _pruned_min(ga.points, gb)


def hausdorff(a, b, scale=None):
    """``(symmetric, d_ab, d_ba)`` Hausdorff distances."""
    d_ab = float(directed_distances(a, b, scale).max())
    d_ba = float(directed_distances(b, a, scale).max())
    return max(d_ab, d_ba), d_ab, d_ba


def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile: the ``ceil(pct/100 * N)``-th smallest value."""
    if not 0.0 < pct <= 100.0:
        raise ValidationError(f"percentile must lie in (0, 100], got {pct}")
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise ValidationError("percentile of an empty set")
    rank = int(np.ceil(pct / 100.0 * len(v)))
    return float(v[max(rank, 1) - 1])


def hausdorff_percentile(a, b, pct: float = 99.0, scale=None) -> float:
    """Nearest-rank ``pct`` percentile of the directed distances from ``a`` to ``b``."""
    return nearest_rank(directed_distances(a, b, scale), pct)


def physical_scale(grid: GridSpec) -> np.ndarray:
    return grid.physical_scale()


@dataclass
class MetricRow:
    case: str
    dice: float
    hd_sym: float
    hd_ab: float
    hd_ba: float
    hd_p99: float
    units: str = "normalized"

    HEADER = ("case", "DC", "HD_sym", "HD_ab", "HD_ba", "HD_p99", "units")

    def values(self):
        return (self.case, self.dice, self.hd_sym, self.hd_ab, self.hd_ba, self.hd_p99, self.units)


def evaluate(case: str, a, b, mask_a: BinaryMask = None, mask_b: BinaryMask = None,
             scale=None, units="normalized") -> MetricRow:
    """All metrics for one pair; Dice only when both masks are given."""
    sym, ab, ba = hausdorff(a, b, scale)
    p99 = hausdorff_percentile(a, b, 99.0, scale)
    dc = dice(mask_a, mask_b) if mask_a is not None and mask_b is not None else float("nan")
    return MetricRow(case, dc, sym, ab, ba, p99, units)
