"""Numerical toolkit for statistical structures and affine hypersurfaces."""
