"""Hybrid quantum-classical convolutional networks on an exact statevector simulator."""

__version__ = "0.1.0"

from . import data, nn, qconv, qfilter, qsim, train  # noqa: E402,F401
