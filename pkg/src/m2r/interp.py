"""Multilinear interpolation on the node lattice.

The same cell weights serve three purposes: sampling a nodal scalar field,
its gradient, and evaluating the finite-element basis functions ``psi_j``
(which for multilinear elements are exactly these weights).
"""

from __future__ import annotations

import itertools

import numpy as np

from .core import GridSpec


def _corner_offsets(n):
    # bit pattern of every cell corner, x varying fastest
    return np.array(list(itertools.product((0, 1), repeat=n)))[:, ::-1]


_CORNERS = {2: _corner_offsets(2), 3: _corner_offsets(3)}


def cell_weights(grid: GridSpec, points, with_gradient: bool = False):
    """Corner node indices and multilinear weights for each point.

    Points are clamped componentwise to ``[0, 1]``.  A point lying exactly
    on a cell face is assigned to the lower cell.

    Returns
    -------
    idx : (m, 2**n) int array of flat (x-fastest) node indices
    w : (m, 2**n) weights, rows sum to one
    dw : (m, 2**n, n) derivatives of the weights with respect to the
        (clamped) point coordinates; only when ``with_gradient``
    outside : (m, n) bool, True where the coordinate was clamped;
        only when ``with_gradient``
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = grid.ndim
    if pts.shape[1] != n:
        raise ValueError(f"points must have {n} columns, got {pts.shape}")
    dims = np.asarray(grid.dims)
    scale = dims - 1.0
    s = np.clip(pts, 0.0, 1.0) * scale
    i0 = np.clip(np.ceil(s).astype(np.int64) - 1, 0, dims - 2)
    f = s - i0
    corners = _CORNERS[n]  # (2**n, n)
    strides = np.cumprod(np.concatenate([[1], dims[:-1]]))

    idx = (i0 @ strides)[:, None] + corners @ strides
    # per-axis factor: f on the upper corner, 1 - f on the lower one
    fac = np.where(corners[None, :, :] == 1, f[:, None, :], 1.0 - f[:, None, :])
    w = np.prod(fac, axis=2)
    if not with_gradient:
        return idx, w
    dfac = np.where(corners == 1, 1.0, -1.0)  # d fac / d f
    dw = np.empty(w.shape + (n,))
    for a in range(n):
        others = np.prod(np.delete(fac, a, axis=2), axis=2)
        dw[:, :, a] = dfac[None, :, a] * others * scale[a]
    outside = (pts < 0.0) | (pts > 1.0)
    return idx, w, dw, outside


def sample(grid: GridSpec, flat_values, points) -> np.ndarray:
    """Interpolate x-fastest nodal values at ``points``."""
    idx, w = cell_weights(grid, points)
    return np.sum(np.asarray(flat_values)[idx] * w, axis=1)


def sample_with_gradient(grid: GridSpec, flat_values, points):
    """Values and gradients of the clamped multilinear interpolant.

    In directions where a point lies outside the domain the clamped
    extension is constant, so that gradient component is zero.
    """
    idx, w, dw, outside = cell_weights(grid, points, with_gradient=True)
    vals = np.asarray(flat_values)[idx]
    value = np.sum(vals * w, axis=1)
    grad = np.einsum("mk,mka->ma", vals, dw)
    grad[outside] = 0.0
    return value, grad
