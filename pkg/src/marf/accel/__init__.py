"""Backend selection for the hot numeric kernels.

``MARF_ACCEL=numpy`` forces the pure-numpy reference kernels; the default is
the numba-jitted path, with a silent-but-logged fallback when numba is not
importable. Both backends share signatures and semantics; see
``benchmarks/bench_kernels.py`` for a timing comparison.
"""

import logging
import os

_log = logging.getLogger(__name__)

_requested = os.environ.get("MARF_ACCEL", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"MARF_ACCEL must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        from . import _numpy as _impl
        BACKEND = "numpy"
        _log.warning("numba unavailable; using pure-numpy kernels")
else:
    from . import _numpy as _impl
    BACKEND = "numpy"

hashgrid_encode = _impl.hashgrid_encode
hashgrid_encode_backward = _impl.hashgrid_encode_backward
