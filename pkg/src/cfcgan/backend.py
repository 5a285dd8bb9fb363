"""Kernel backend selection.

``CFCG_KERNELS`` picks the implementation of the hot kernels:

* ``auto`` (default) — the fast mix: BLAS-backed numpy convolutions plus
  numba ray kernels (measured fastest; see benchmarks/bench_kernels.py).
  Falls back to pure numpy when numba is unavailable.
* ``numba``          — all kernels jitted; fail loudly if numba is missing
* ``numpy``          — force the pure-numpy fallback everywhere

``CFCG_THREADS`` caps numba's thread pool. Both variables are read once
at import time.
"""

import os

from . import kernels_numpy

_choice = os.environ.get("CFCG_KERNELS", "auto")
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"CFCG_KERNELS must be auto|numba|numpy, got {_choice!r}")

_numba_impl = None
if _choice != "numpy":
    try:
        from . import kernels_numba as _numba_impl  # type: ignore[assignment]

        _threads = os.environ.get("CFCG_THREADS")
        if _threads:
            import numba

            numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        if _choice == "numba":
            raise
        _numba_impl = None

if _choice == "numba":
    KERNEL_PATH = "numba"
    conv2d_forward = _numba_impl.conv2d_forward
    conv2d_grad_input = _numba_impl.conv2d_grad_input
    conv2d_grad_weight = _numba_impl.conv2d_grad_weight
    radon = _numba_impl.radon
    backproject = _numba_impl.backproject
elif _numba_impl is not None:
    KERNEL_PATH = "auto"
    conv2d_forward = kernels_numpy.conv2d_forward
    conv2d_grad_input = kernels_numpy.conv2d_grad_input
    conv2d_grad_weight = kernels_numpy.conv2d_grad_weight
    radon = _numba_impl.radon
    backproject = _numba_impl.backproject
else:
    KERNEL_PATH = "numpy"
    conv2d_forward = kernels_numpy.conv2d_forward
    conv2d_grad_input = kernels_numpy.conv2d_grad_input
    conv2d_grad_weight = kernels_numpy.conv2d_grad_weight
    radon = kernels_numpy.radon
    backproject = kernels_numpy.backproject
