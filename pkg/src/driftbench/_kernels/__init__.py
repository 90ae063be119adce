"""LSTM hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports cleanly; setting
``DRIFTBENCH_PURE_PYTHON=1`` forces the fallback.  ``BACKEND`` names the
active implementation.
"""

import os

from . import _lstm_py

try:
    if os.environ.get("DRIFTBENCH_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _lstm_ext as _active

    BACKEND = "cython"
except ImportError:
    _active = _lstm_py
    BACKEND = "python"

lstm_forward = _active.lstm_forward
lstm_backward = _active.lstm_backward


def available_backends():
    """Return ``{name: module}`` for every kernel backend importable here."""
    found = {"python": _lstm_py}
    try:
        from . import _lstm_ext

        found["cython"] = _lstm_ext
    except ImportError:
        pass
    return found
