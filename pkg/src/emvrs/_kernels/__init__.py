"""Kernel backend selection.

Prefers the compiled extension; falls back to the pure-numpy implementation
when the extension is missing or ``EMVRS_FORCE_NUMPY`` is set in the
environment.  Both backends implement the same scheme and agree to float
round-off (see tests and benchmarks).
"""
import os

from . import _ode_numpy

if os.environ.get("EMVRS_FORCE_NUMPY"):
    _impl = _ode_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _ode_cy as _impl
        BACKEND = "cython"
    except ImportError:  # built without the extension
        _impl = _ode_numpy
        BACKEND = "numpy"

solve_coefficient_grids = _impl.solve_coefficient_grids


def backend() -> str:
    """Name of the active backend ('cython' or 'numpy')."""
    return BACKEND
