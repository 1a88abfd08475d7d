"""Region extraction by registering a template contour to a thresholded image."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from .core import BinaryMask, Contour, RegistrationParams, ScalarField, ValidationError
from .data_term import deform_points
from .distance import signed_distance_transform

log = logging.getLogger(__name__)

DEFAULT_RADIUS = 0.1
DEFAULT_POINTS = 128


def threshold_mask(image: ScalarField, threshold: float, polarity: str = "above") -> BinaryMask:
    """``image >= threshold`` (``above``) or ``image <= threshold`` (``below``)."""
    if polarity == "above":
        bits = image.values >= threshold
    elif polarity == "below":
        bits = image.values <= threshold
    else:
        raise ValidationError(f"polarity must be 'above' or 'below', got {polarity!r}")
    mask = BinaryMask(image.grid, bits)
    mask.require_mixed()
    return mask


def make_circle_contour(center=(0.5, 0.5), radius: float = DEFAULT_RADIUS,
                        n_points: int = DEFAULT_POINTS) -> Contour:
    """Counter-clockwise closed circle starting at angle 0."""
    c = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ValidationError("radius must be positive")
    if np.any(c - radius < 0.0) or np.any(c + radius > 1.0):
        raise ValidationError("circle exits the unit square")
    ang = 2.0 * np.pi * np.arange(n_points) / n_points
    pts = c + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return Contour(pts, closed=True)


def _orient(p, q, r):
    return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                   - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))


def self_intersections(contour: Contour):
    """Index pairs ``(i, j)`` of non-adjacent segments that intersect."""
    a, b = contour.segments()
    n = len(a)
    # bounding-box sweep along x keeps this near-linear for smooth curves
    xlo = np.minimum(a[:, 0], b[:, 0])
    xhi = np.maximum(a[:, 0], b[:, 0])
    order = np.argsort(xlo, kind="stable")
    found = []
    active = []
    for i in order:
        active = [j for j in active if xhi[j] >= xlo[i]]
        if active:
            js = np.array(active)
            adjacent = (js == (i + 1) % n) | (i == (js + 1) % n) if contour.closed else \
                (js == i + 1) | (i == js + 1)
            js = js[~adjacent]
            if len(js):
                d1 = _orient(a[i], b[i], a[js])
                d2 = _orient(a[i], b[i], b[js])
                d3 = _orient(a[js], b[js], a[i])
                d4 = _orient(a[js], b[js], b[i])
                # proper crossings and touching configurations
                hit = (d1 * d2 <= 0) & (d3 * d4 <= 0)
                ylo_i, yhi_i = sorted((a[i, 1], b[i, 1]))
                ylo = np.minimum(a[js, 1], b[js, 1])
                yhi = np.maximum(a[js, 1], b[js, 1])
                hit &= (ylo <= yhi_i) & (yhi >= ylo_i)
                collinear = (d1 == 0) & (d2 == 0)
                if np.any(collinear):
                    # collinear pieces only intersect if their x ranges overlap
                    ov = (np.minimum(xhi[js], xhi[i]) >= np.maximum(xlo[js], xlo[i]))
                    hit &= ~collinear | ov
                for j in js[hit]:
                    found.append((int(min(i, j)), int(max(i, j))))
        active.append(i)
    return sorted(found)


def is_simple(contour: Contour) -> bool:
    return not self_intersections(contour)


def deform_contour(contour: Contour, deform) -> Contour:
    return contour.with_points(deform_points(contour.points, deform))


def segment_roi(init: Contour, mask: BinaryMask, params: RegistrationParams):
    """Register ``init`` to the boundary of ``mask`` (affine then non-rigid).

    Returns ``(contour, field)`` where ``contour`` is ``init`` mapped through
    the final deformation and ``field`` the nodal displacement.
    """
    from .nonrigid import register_nonrigid
    from .parametric import affine_to_displacement, register_parametric
    from .interp import sample

    if mask.grid.ndim != 2:
        raise ValidationError("segment_roi works on 2D masks")
    sdf = signed_distance_transform(mask)
    d0 = sample(mask.grid, sdf.field.flat, init.points)
    if np.any(d0 > 0.0):
        warnings.warn("initial contour is not entirely inside the mask foreground",
                      RuntimeWarning, stacklevel=2)
    affine = register_parametric(init, sdf, params)
    u0 = affine_to_displacement(affine, mask.grid)
    u = register_nonrigid(init, sdf, u0, params)
    out = deform_contour(init, u)
    crossings = self_intersections(out)
    if crossings:
        warnings.warn(f"segmented contour self-intersects at segments {crossings[:10]}",
                      RuntimeWarning, stacklevel=2)
    return out, u
