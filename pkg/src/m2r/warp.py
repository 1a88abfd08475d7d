"""Resampling images through a deformation and blending image pairs."""

from __future__ import annotations

import numpy as np

from .core import AffineMap, DisplacementField, ScalarField, ValidationError
from .data_term import deform_points
from .interp import sample


def pullback_warp(image: ScalarField, deform) -> ScalarField:
    """``out(x) = image(phi(x))`` at every node, multilinear with clamping."""
    grid = image.grid
    if isinstance(deform, DisplacementField):
        if deform.grid.dims != grid.dims:
            raise ValidationError(f"field grid {deform.grid.dims} does not match "
                                  f"image grid {grid.dims}")
        if not np.any(deform.nodal):
            return ScalarField(grid, image.values)
        # phi(x_j) = x_j + u_j exactly at nodes
        moved = grid.node_points() + deform.component_matrix().T
    elif isinstance(deform, AffineMap):
        if deform.ndim != grid.ndim:
            raise ValidationError("affine map dimension does not match the image")
        moved = deform_points(grid.node_points(), deform)
    else:
        raise ValidationError(f"unsupported deformation {type(deform).__name__}")
    return ScalarField(grid, sample(grid, image.flat, moved))


def blend(a: ScalarField, b: ScalarField, alpha: float = 0.5) -> ScalarField:
    """``alpha * a + (1 - alpha) * b``."""
    if a.grid.dims != b.grid.dims:
        raise ValidationError(f"image grids differ: {a.grid.dims} vs {b.grid.dims}")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return ScalarField(a.grid, a.values)
    if alpha == 0.0:
        return ScalarField(b.grid, b.values)
    return ScalarField(a.grid, alpha * a.values + (1.0 - alpha) * b.values)
