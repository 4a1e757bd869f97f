"""Bezier-curve ensembles and bridge networks at desk scale."""

__version__ = "0.1.0"
