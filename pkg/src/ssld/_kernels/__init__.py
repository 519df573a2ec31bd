"""Kernel backend selection.

Two interchangeable implementations exist for every kernel: a compiled Cython
extension and a pure-numpy reference. In ``auto`` mode (the default) each
kernel family uses whichever implementation measures faster
(``benchmarks/bench_kernels.py``): dense conv2d maps onto BLAS GEMMs, which
beat the compiled loops, while the depthwise time convolution has no BLAS
mapping and the compiled loops win. ``SSLD_KERNELS=numpy`` forces the pure
fallback everywhere; ``SSLD_KERNELS=cython`` forces the extension everywhere
(and makes a missing extension an error instead of a silent fallback).
"""

import os

from . import numpy_ref

try:
    from . import _ckern
except ImportError:
    _ckern = None

_choice = os.environ.get("SSLD_KERNELS", "auto").strip().lower()

if _choice in ("numpy", "python", "pure") or (_choice != "cython" and _ckern is None):
    if _choice not in ("numpy", "python", "pure", "auto", ""):
        raise ValueError(f"unknown SSLD_KERNELS value: {_choice!r}")
    BACKEND = "numpy"
    _conv2d_impl = _dw_impl = numpy_ref
elif _choice == "cython":
    if _ckern is None:
        raise ImportError("SSLD_KERNELS=cython but the extension is not built")
    BACKEND = "cython"
    _conv2d_impl = _dw_impl = _ckern
elif _choice in ("auto", ""):
    BACKEND = "auto"
    _conv2d_impl = numpy_ref
    _dw_impl = _ckern
else:
    raise ValueError(f"unknown SSLD_KERNELS value: {_choice!r}")

conv2d_forward = _conv2d_impl.conv2d_forward
conv2d_backward_input = _conv2d_impl.conv2d_backward_input
conv2d_backward_weight = _conv2d_impl.conv2d_backward_weight
dwconv1d_forward = _dw_impl.dwconv1d_forward
dwconv1d_backward_input = _dw_impl.dwconv1d_backward_input
dwconv1d_backward_weight = _dw_impl.dwconv1d_backward_weight

HAVE_COMPILED = _ckern is not None
