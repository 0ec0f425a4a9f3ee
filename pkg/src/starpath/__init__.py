"""Starpath: reshuffled SGD on finite sums and star-convex path diagnostics."""

from starpath.utils import VERSION

__version__ = VERSION
