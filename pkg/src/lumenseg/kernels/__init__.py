"""Backend selection for the convolution hot loops.

The compiled extension is preferred when it imports; otherwise the numpy
fallback is used. ``LUMENSEG_KERNELS=numpy`` or ``=cython`` forces a choice
(forcing an unavailable compiled backend is an error rather than a silent
fallback). Both backends implement the same four functions with identical
layouts; ``benchmarks/kernel_bench.py`` compares their throughput.
"""

import os

from . import numpy_backend

_forced = os.environ.get("LUMENSEG_KERNELS", "").strip().lower()

if _forced == "numpy":
    backend = numpy_backend
elif _forced == "cython":
    from . import cython_backend

    backend = cython_backend
elif _forced:
    raise ImportError(f"unknown LUMENSEG_KERNELS backend {_forced!r}")
else:
    try:
        from . import cython_backend

        backend = cython_backend
    except ImportError:
        backend = numpy_backend

BACKEND_NAME = backend.NAME

conv2d_forward = backend.conv2d_forward
conv2d_backward = backend.conv2d_backward
conv3d_forward = backend.conv3d_forward
conv3d_backward = backend.conv3d_backward
