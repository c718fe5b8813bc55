"""Diagnostic figure rendering for the torus NLS toolkit's outputs."""

from .render import FigureSpec, KINDS, SchemaError, refit_moment_exponent, render

__version__ = "0.1.0"
