"""Kernel backend selection.

The hot numeric kernels (2-D convolution, 2x2 max pooling, encoder
enumeration scans) exist twice: numba-compiled loops and a pure-numpy
fallback. The environment variable ``AFLACLAB_KERNELS`` picks the active
set:

    AFLACLAB_KERNELS=numba   force numba (error if numba is unavailable)
    AFLACLAB_KERNELS=numpy   force the pure-numpy path
    unset / auto             numba when importable, numpy otherwise

Within one backend all results are bit-deterministic for fixed inputs.
Across backends the two implementations agree to floating-point roundoff
only (different accumulation orders); ``benchmarks/kernel_bench.py`` times
both and checks their agreement.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

KERNEL_NAMES = (
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "encoder_scan",
)

_ENV_VAR = "AFLACLAB_KERNELS"


def _load_numba_kernels():
    from . import _kernels_numba

    return _kernels_numba


def resolve(choice: str | None = None):
    """Return (name, module) for the requested or auto-detected backend."""
    choice = (choice if choice is not None else os.environ.get(_ENV_VAR, "auto")).lower()
    if choice == "numpy":
        return "numpy", _kernels_numpy
    if choice == "numba":
        return "numba", _load_numba_kernels()
    if choice != "auto":
        raise ValueError(f"unknown kernel backend {choice!r}; expected numba, numpy, or auto")
    try:
        return "numba", _load_numba_kernels()
    except ImportError:
        return "numpy", _kernels_numpy


ACTIVE_NAME, _active = resolve()

conv2d_forward = _active.conv2d_forward
conv2d_backward = _active.conv2d_backward
maxpool2_forward = _active.maxpool2_forward
maxpool2_backward = _active.maxpool2_backward
encoder_scan = _active.encoder_scan
