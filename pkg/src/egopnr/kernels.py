"""Backend selection for the sampling kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``EGO_PURE=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("EGO_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

EVEN, STRATIFIED, RANDOM = _kernels_py.EVEN, _kernels_py.STRATIFIED, _kernels_py.RANDOM

sample_indices = _impl.sample_indices
nearest_slots = _impl.nearest_slots
shift_distances = _impl.shift_distances
