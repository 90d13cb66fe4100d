"""Metamorphosis: geodesic evolution combining deformation and template change."""

__version__ = "0.1.0"

from . import curves, grid, io, kernels, landmark, measures, oned  # noqa: F401
