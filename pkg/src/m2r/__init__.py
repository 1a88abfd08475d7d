"""Mesh-to-raster registration: distance-field matching of contours and surfaces.

Submodules are imported on demand so that ``m2r.cli`` can configure thread
limits before numpy/scipy are loaded.
"""

__version__ = "0.1.0"
