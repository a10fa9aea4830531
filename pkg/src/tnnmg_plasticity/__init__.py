"""Truncated nonsmooth Newton multigrid for small-strain primal elastoplasticity."""

__version__ = "0.1.0"
