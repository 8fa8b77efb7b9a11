"""Numerical toolkit for bilinear Fourier extension estimates on quadratic
and smooth surfaces of arbitrary codimension."""

__version__ = "0.1.0"
