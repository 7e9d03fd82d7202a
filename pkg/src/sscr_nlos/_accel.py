"""Selects the accumulation-kernel backend at import time.

The compiled extension is preferred; the numpy fallback is used when the
extension is missing or when ``SSCR_NLOS_PURE=1`` is set (useful for
benchmarking and for debugging kernel discrepancies).
"""

import os

from . import _kernels_py

if os.environ.get("SSCR_NLOS_PURE", "") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
forward_apply = _impl.forward_apply
adjoint_apply = _impl.adjoint_apply
solve_bins = _impl.solve_bins


def backends():
    """All importable kernel backends, keyed by name."""
    found = {"numpy": _kernels_py}
    try:
        from . import _kernels

        found[_kernels.BACKEND] = _kernels
    except ImportError:
        pass
    return found
