"""Geometric and raster domain types shared by the whole package.

Conventions
-----------
* The domain is always the unit square/cube ``[0, 1]^n`` with ``n`` in {2, 3}.
* Grids are node-centred: node ``k`` along an axis with ``D`` nodes sits at
  ``k / (D - 1)``.
* Nodal arrays are held with shape ``dims`` so that array axis ``i`` is
  coordinate axis ``i``.  Flattening uses Fortran order, i.e. x-fastest,
  which is also the on-disk order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class SolverError(RuntimeError):
    """Raised when an optimisation cannot produce a usable iterate.

    ``partial`` carries the last usable result (if any) and ``stage`` the
    zero-based continuation stage that failed.
    """

    def __init__(self, message, partial=None, stage=None):
        super().__init__(message)
        self.partial = partial
        self.stage = stage


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    """Uniform node lattice on the unit cube.

    ``spacing`` is the physical size of one cell per axis and only matters
    when distances are reported in physical units.
    """

    dims: tuple
    spacing: tuple = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValidationError(f"grid must be 2D or 3D, got dims={dims}")
        if any(d < 2 for d in dims):
            raise ValidationError(f"every grid axis needs >= 2 nodes, got dims={dims}")
        object.__setattr__(self, "dims", dims)
        if self.spacing is None:
            spacing = tuple(1.0 / (d - 1) for d in dims)
        else:
            spacing = tuple(float(s) for s in self.spacing)
            if len(spacing) != len(dims) or any(s <= 0 for s in spacing):
                raise ValidationError(f"invalid spacing {self.spacing} for dims={dims}")
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def h(self) -> np.ndarray:
        """Cell size per axis in normalised coordinates."""
        return 1.0 / (np.asarray(self.dims, dtype=float) - 1.0)

    @property
    def cell_width(self) -> float:
        """Largest normalised cell size, used as "one cell" in tolerances."""
        return float(self.h.max())

    @property
    def cell_diagonal(self) -> float:
        return float(np.sqrt(np.sum(self.h ** 2)))

    def physical_scale(self) -> np.ndarray:
        """Factor converting normalised lengths to physical lengths per axis."""
        return np.asarray(self.spacing) / self.h

    def axes(self) -> list:
        return [np.linspace(0.0, 1.0, d) for d in self.dims]

    def node_points(self) -> np.ndarray:
        """All node coordinates, shape ``(num_nodes, n)``, x-fastest."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel(order="F") for m in mesh], axis=1)

    def same_as(self, other: "GridSpec") -> bool:
        return self.dims == other.dims


def node_coordinates(grid: GridSpec, index: Sequence[int]) -> np.ndarray:
    """Normalised coordinate of the node with multi-index ``index``."""
    index = tuple(int(k) for k in index)
    if len(index) != grid.ndim:
        raise ValidationError(f"index {index} has wrong length for dims={grid.dims}")
    for k, d in zip(index, grid.dims):
        if not 0 <= k < d:
            raise ValidationError(f"index {index} out of range for dims={grid.dims}")
    return np.array([k / (d - 1) for k, d in zip(index, grid.dims)])


def nearest_node(grid: GridSpec, point: Sequence[float]) -> tuple:
    """Multi-index of the node closest to ``point`` (clamped to the domain)."""
    p = np.clip(np.asarray(point, dtype=float), 0.0, 1.0)
    dims = np.asarray(grid.dims)
    return tuple(int(k) for k in np.rint(p * (dims - 1)).astype(int))


@dataclass(frozen=True)
class ScalarField:
    """One real value per grid node; ``values`` has shape ``grid.dims``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.shape != self.grid.dims:
            if values.size == self.grid.num_nodes and values.ndim == 1:
                values = _frozen_array(values.reshape(self.grid.dims, order="F"))
            else:
                raise ValidationError(
                    f"field shape {values.shape} does not match dims={self.grid.dims}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("field values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel(order="F")


@dataclass(frozen=True)
class BinaryMask:
    """Boolean per node, ``True`` inside the region of interest."""

    grid: GridSpec
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.shape != self.grid.dims:
            if bits.ndim == 1 and bits.size == self.grid.num_nodes:
                bits = bits.reshape(self.grid.dims, order="F")
            else:
                raise ValidationError(
                    f"mask shape {bits.shape} does not match dims={self.grid.dims}")
        object.__setattr__(self, "bits", _frozen_array(bits, dtype=bool))

    @property
    def flat(self) -> np.ndarray:
        return self.bits.ravel(order="F")

    def is_mixed(self) -> bool:
        return bool(self.bits.any()) and not bool(self.bits.all())

    def require_mixed(self):
        if not self.is_mixed():
            state = "all-true" if self.bits.all() else "all-false"
            raise ValidationError(f"mask is {state}; its boundary is undefined")

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class Contour:
    """Polyline of 2D points; closed contours get the segment ``N -> 1``."""

    points: np.ndarray
    closed: bool = True

    def __post_init__(self):
        pts = _frozen_array(self.points)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError(f"contour points must have shape (N, 2), got {pts.shape}")
        if self.closed and len(pts) < 3:
            raise ValidationError("a closed contour needs at least 3 points")
        if len(pts) < 2:
            raise ValidationError("a contour needs at least 2 points")
        seg = self.segments_array(pts, self.closed)
        if np.any(np.all(seg[0] == seg[1], axis=1)):
            raise ValidationError("consecutive contour points must be distinct")
        object.__setattr__(self, "points", pts)

    @staticmethod
    def segments_array(pts, closed):
        nxt = np.roll(pts, -1, axis=0) if closed else pts[1:]
        start = pts if closed else pts[:-1]
        return start, nxt

    def segments(self):
        """``(start, end)`` arrays, one row per segment."""
        return self.segments_array(self.points, self.closed)

    @property
    def num_points(self) -> int:
        return len(self.points)

    def length(self) -> float:
        a, b = self.segments()
        return float(np.linalg.norm(b - a, axis=1).sum())

    def signed_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def with_points(self, points) -> "Contour":
        return Contour(points, self.closed)


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh in 3D; ``triangles`` holds vertex-index triples."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = _frozen_array(self.vertices)
        t = _frozen_array(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must have shape (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise ValidationError(f"triangles must have shape (T, 3), got {t.shape}")
        if t.min() < 0 or t.max() >= len(v):
            raise ValidationError("triangle vertex index out of range")
        if np.any(self._areas(v, t) <= 0.0):
            raise ValidationError("mesh contains a degenerate (zero-area) triangle")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @staticmethod
    def _areas(v, t):
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def areas(self) -> np.ndarray:
        return self._areas(self.vertices, self.triangles)

    def corners(self):
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.triangles)


@dataclass(frozen=True)
class DisplacementField:
    """Nodal displacement ``u`` with ``phi(x) = x + u(x)``.

    ``nodal`` has shape ``(n, *dims)``; component ``c`` holds the values of
    ``u_c`` at every node.
    """

    grid: GridSpec
    nodal: np.ndarray

    def __post_init__(self):
        n = self.grid.ndim
        arr = np.asarray(self.nodal, dtype=float)
        if arr.shape != (n,) + self.grid.dims:
            if arr.size == n * self.grid.num_nodes and arr.ndim == 1:
                flat = arr.reshape(n, -1)
                arr = np.stack([f.reshape(self.grid.dims, order="F") for f in flat])
            else:
                raise ValidationError(
                    f"displacement shape {arr.shape} does not match "
                    f"{(n,) + self.grid.dims}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("displacement values must be finite")
        object.__setattr__(self, "nodal", _frozen_array(arr))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "DisplacementField":
        return cls(grid, np.zeros((grid.ndim,) + grid.dims))

    @classmethod
    def from_vector(cls, grid: GridSpec, vec) -> "DisplacementField":
        vec = np.asarray(vec, dtype=float).reshape(grid.ndim, grid.num_nodes)
        return cls(grid, np.stack([v.reshape(grid.dims, order="F") for v in vec]))

    def as_vector(self) -> np.ndarray:
        """Component-major, x-fastest flattening (also the solver layout)."""
        return np.concatenate([c.ravel(order="F") for c in self.nodal])

    def component_matrix(self) -> np.ndarray:
        """Shape ``(n, num_nodes)`` view of the nodal values."""
        return self.as_vector().reshape(self.grid.ndim, -1)

    def max_norm(self) -> float:
        return float(np.sqrt((self.nodal ** 2).sum(axis=0)).max())


@dataclass(frozen=True)
class AffineMap:
    """``phi(c) = A c + t``."""

    A: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        A = _frozen_array(self.A)
        t = _frozen_array(self.t)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] not in (2, 3):
            raise ValidationError(f"A must be 2x2 or 3x3, got {A.shape}")
        if t.shape != (A.shape[0],):
            raise ValidationError(f"t must have length {A.shape[0]}, got {t.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, n: int) -> "AffineMap":
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def from_params(cls, params, n: int) -> "AffineMap":
        params = np.asarray(params, dtype=float)
        return cls(params[: n * n].reshape(n, n), params[n * n:])

    @property
    def ndim(self) -> int:
        return self.A.shape[0]

    def params(self) -> np.ndarray:
        """Row-major ``A`` followed by ``t``."""
        return np.concatenate([self.A.ravel(), self.t])

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.A.T + self.t

    def det(self) -> float:
        return float(np.linalg.det(self.A))


@dataclass(frozen=True)
class RegistrationParams:
    """Weights and solver controls for the registration stages."""

    alpha: float = 1.0
    mu: float = 1.0
    lambda_schedule: tuple = (1e-2, 1e-3, 1e-4)
    max_gn_iters: int = 50
    energy_rel_tol: float = 1e-8
    backend: str = "auto"
    lsq_atol: float = 1e-8
    lsq_btol: float = 1e-8
    max_inner: int = None
    parametric_iters: int = 100
    weight_policy: str = "auto"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        sched = tuple(float(v) for v in self.lambda_schedule)
        object.__setattr__(self, "lambda_schedule", sched)
        if self.alpha < 0 or self.mu < 0:
            raise ValidationError("alpha and mu must be nonnegative")
        if not sched:
            raise ValidationError("lambda_schedule must not be empty")
        if any(v <= 0 for v in sched):
            raise ValidationError("lambda values must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValidationError("lambda_schedule must be strictly decreasing")
        if int(self.max_gn_iters) < 1:
            raise ValidationError("max_gn_iters must be positive")
        if self.energy_rel_tol <= 0:
            raise ValidationError("energy_rel_tol must be positive")
        if self.backend not in ("auto", "direct", "iterative"):
            raise ValidationError(f"unknown backend {self.backend!r}")

    def replace(self, **changes) -> "RegistrationParams":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return RegistrationParams(**data)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "mu": self.mu,
            "lambda_schedule": list(self.lambda_schedule),
            "max_gn_iters": self.max_gn_iters,
            "energy_rel_tol": self.energy_rel_tol,
            "backend": self.backend,
            "lsq_atol": self.lsq_atol,
            "lsq_btol": self.lsq_btol,
            "max_inner": self.max_inner,
            "parametric_iters": self.parametric_iters,
            "weight_policy": self.weight_policy,
        }
