"""Test-time training of graph node classifiers with budgeted pseudo-labels."""

from gttt.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
