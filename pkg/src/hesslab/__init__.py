"""Numerical laboratory for m-subharmonic functions on gridded domains in C^n."""

__version__ = "0.1.0"
