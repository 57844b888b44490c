"""Backend selection for the hot kernels.

Numba is used when importable unless ``NERVEQUERY_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel dispatches to its pure-numpy twin.
"""
import os
import warnings

_FLAG = os.environ.get("NERVEQUERY_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by NERVEQUERY_DISABLE_NUMBA")
    import numba

    # an old system TBB only makes numba fall back to another threading layer
    warnings.filterwarnings("ignore", message=".*TBB.*", module="numba")
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


def set_threads(n: int | None) -> int:
    """Set kernel parallelism; returns the effective thread count."""
    if not HAVE_NUMBA:
        return 1
    if n is None or n <= 0:
        n = numba.config.NUMBA_NUM_THREADS
    n = min(int(n), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n
