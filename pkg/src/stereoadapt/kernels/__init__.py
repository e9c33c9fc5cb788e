"""Kernel backend selection.

Two interchangeable implementations exist: vectorized numpy and a compiled
Cython extension.  By default (BACKEND == "auto") each kernel picks the
implementation that measured faster on representative shapes, which is the
extension for everything except convolution, where im2col plus BLAS beats
scalar loops by a wide margin (see benchmarks/bench_backends.py).

Set STEREOADAPT_BACKEND=numpy or =native to force one implementation for
every kernel; forcing native raises if the extension is unavailable.
Helpers that are already O(n) vectorized numpy (box sums, interpolation
matrices) have no compiled counterpart.
"""

import os

from . import numpy_kernels as _numpy_impl
from .numpy_kernels import bilinear_matrix, box_count, box_sum  # noqa: F401

_KERNELS = (
    "conv2d_forward",
    "conv2d_backward",
    "correlation_forward",
    "correlation_backward",
    "warp_forward",
    "warp_backward",
    "census_transform",
    "hamming_volume",
    "sad_volume",
    "sgm_scan_x",
    "sgm_scan_diag",
)

# BLAS-backed numpy convolution outpaces the scalar extension loops, so the
# auto mode keeps it even when the extension is present.
_PREFER_NUMPY = ("conv2d_forward", "conv2d_backward")

_requested = os.environ.get("STEREOADAPT_BACKEND", "").strip().lower()
if _requested not in ("", "auto", "numpy", "native"):
    raise ImportError(
        "STEREOADAPT_BACKEND must be 'auto', 'numpy' or 'native', got %r"
        % _requested)

_native_impl = None
if _requested != "numpy":
    try:
        from . import _native as _native_impl
    except ImportError:
        if _requested == "native":
            raise ImportError(
                "STEREOADAPT_BACKEND=native but the compiled extension is "
                "not available; rebuild the package with Cython and a C "
                "compiler")
        _native_impl = None

if _native_impl is None:
    BACKEND = "numpy"
elif _requested == "native":
    BACKEND = "native"
else:
    BACKEND = "auto"


def _pick(name):
    if BACKEND == "numpy":
        return getattr(_numpy_impl, name)
    if BACKEND == "native":
        return getattr(_native_impl, name)
    if name in _PREFER_NUMPY:
        return getattr(_numpy_impl, name)
    return getattr(_native_impl, name)


for _name in _KERNELS:
    globals()[_name] = _pick(_name)
del _name
