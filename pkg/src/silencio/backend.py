"""Kernel backend selection and worker configuration.

Hot inner loops (gated recurrence, temporal convolution, DTW table fill)
exist twice: a numba ``@njit`` version and a pure-numpy fallback.  The env
var ``SILENCIO_BACKEND`` picks one:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - require numba, fail at import if missing
* ``numpy``          - force the fallback path

``SILENCIO_THREADS`` caps worker threads for the per-utterance parallel
stages (pseudo-target generation, evaluation).  Default is 1.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_CHOICE = os.environ.get("SILENCIO_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SILENCIO_BACKEND must be 'auto', 'numba' or 'numpy', got {_CHOICE!r}"
    )
if _CHOICE == "numba" and not HAVE_NUMBA:
    raise ImportError("SILENCIO_BACKEND=numba but numba is not importable")

USE_NUMBA = HAVE_NUMBA if _CHOICE == "auto" else _CHOICE == "numba"


def njit(func):
    """Compile ``func`` with numba (nopython, disk-cached). fastmath stays
    off: bitwise reproducibility matters more here than the last few %."""
    return numba.njit(cache=True, fastmath=False)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def worker_count():
    raw = os.environ.get("SILENCIO_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SILENCIO_THREADS must be an integer, got {raw!r}")
    return max(1, n)
