"""Backend selection for the compiled kernels.

Set ``AAOPTD_NO_NUMBA=1`` to force the pure-numpy paths. Without numba
installed the numpy paths are used regardless.
"""

import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    _njit = None


def _flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _flag("AAOPTD_NO_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)

    def decorator(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return decorator


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
