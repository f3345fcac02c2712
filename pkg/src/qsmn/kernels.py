"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set ``QSMN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("QSMN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

negacyclic_mul = _impl.negacyclic_mul
bb84_channel = _impl.bb84_channel
parity_bisect_pass = _impl.parity_bisect_pass

__all__ = ["BACKEND", "negacyclic_mul", "bb84_channel", "parity_bisect_pass"]
