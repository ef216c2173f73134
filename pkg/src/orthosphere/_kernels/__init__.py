"""Kernel backend dispatch.

The hot inner loops (conv2d and max-pool, forward and backward) exist twice:
a numba ``@njit`` version and a pure-numpy version. Selection, checked once
at import:

* ``ORTHOSPHERE_BACKEND=numpy``  force the numpy path
* ``ORTHOSPHERE_BACKEND=numba``  force numba (ImportError if missing)
* unset or ``auto``              numba when importable, else numpy

``set_backend()`` re-points the dispatch at runtime; the benchmark and the
parity tests use it to exercise both paths in one process.
"""

import os

from . import numpy_impl

_FUNCS = (
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_kernel",
    "maxpool_forward",
    "maxpool_backward",
)

backend_name = "numpy"
_active = numpy_impl


def _load_numba_impl():
    from . import numba_impl

    return numba_impl


def set_backend(name):
    """Switch the active kernel backend ('numpy' or 'numba')."""
    global _active, backend_name
    if name == "numpy":
        _active = numpy_impl
    elif name == "numba":
        _active = _load_numba_impl()
    else:
        raise ValueError(f"unknown kernel backend {name!r} (use 'numpy' or 'numba')")
    backend_name = name
    for fn in _FUNCS:
        globals()[fn] = getattr(_active, fn)


def _initial_backend():
    choice = os.environ.get("ORTHOSPHERE_BACKEND", "auto").lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        return "numba"
    if choice != "auto":
        raise ValueError(
            f"ORTHOSPHERE_BACKEND={choice!r} not understood (numpy|numba|auto)"
        )
    try:
        _load_numba_impl()
        return "numba"
    except ImportError:
        return "numpy"


set_backend(_initial_backend())
