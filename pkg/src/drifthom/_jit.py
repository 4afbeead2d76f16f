"""Backend selection for the hot kernels.

Set ``DRIFTHOM_DISABLE_JIT=1`` before import to route every kernel through
its pure-numpy twin instead of the numba-compiled loop version.
"""
import os

_FLAG = os.environ.get("DRIFTHOM_DISABLE_JIT", "0").strip().lower()

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True`` by default; identity when numba is absent."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    if len(args) == 1 and callable(args[0]):
        return numba.njit(**kwargs)(args[0])
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
