"""Kernel backend selection.

Hot numeric loops ship in two forms: a numba-compiled kernel and a pure
numpy fallback.  The environment variable ``LGL_BACKEND`` picks the path:

* ``LGL_BACKEND=numba`` requires numba (raises if it cannot be imported)
* ``LGL_BACKEND=numpy`` forces the pure-numpy fallback
* unset or ``auto``     uses numba when importable, numpy otherwise

The choice is resolved once at import time; ``BACKEND`` reports it.
"""

import os

_choice = os.environ.get("LGL_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"LGL_BACKEND must be auto, numba or numpy, got {_choice!r}")

if _choice == "numpy":
    USING_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        USING_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise
        USING_NUMBA = False

if USING_NUMBA:
    from numba import njit
else:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit when running on the numpy backend."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


BACKEND = "numba" if USING_NUMBA else "numpy"
