"""Multifocal stereoscopic projection-mapping simulator."""

__version__ = "0.1.0"
