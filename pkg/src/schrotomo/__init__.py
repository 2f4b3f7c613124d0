"""Geodesic X-ray tomography and Schrodinger boundary-data inversion on
simple two-dimensional conformal disks."""

from . import geodesic, geometry, schrodinger, wkb, xray

__version__ = "0.1.0"

__all__ = ["geodesic", "geometry", "schrodinger", "wkb", "xray", "__version__"]
