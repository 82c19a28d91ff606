"""Backend switch for the hot loops.

The jitted kernels are used when numba is importable, unless the environment
variable ``DENSTRACK_DISABLE_NUMBA`` is set to a truthy value, in which case
every kernel falls back to its vectorised numpy twin. The flag is read once,
at import time.
"""
import os

_TRUTHY = {"1", "true", "yes", "on"}

try:  # pragma: no cover - depends on the environment
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
if HAVE_NUMBA and "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old on some hosts and warns on every parallel launch
    numba.config.THREADING_LAYER = "workqueue"
DISABLED = os.environ.get("DENSTRACK_DISABLE_NUMBA", "").strip().lower() in _TRUTHY
USE_NUMBA = HAVE_NUMBA and not DISABLED


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def set_threads(n=None):
    """Cap the worker count of parallel kernels.

    ``None`` reads ``DENSTRACK_THREADS``; if that is unset too, nothing changes.
    Results do not depend on the thread count.
    """
    if n is None:
        env = os.environ.get("DENSTRACK_THREADS")
        if not env:
            return
        n = int(env)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if HAVE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
