"""Kernel backend selection.

The convolution kernels exist twice: a compiled Cython extension
(varnet4d._fastkernels) and a pure-numpy fallback (_kernels_np). The
compiled core is preferred when importable; VARNET4D_KERNELS=numpy|compiled
forces a choice (useful for the benchmark and for debugging). Both expose
identical functions and agree to floating-point roundoff; the test suite
cross-checks them.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_np

try:
    from . import _fastkernels
except ImportError:
    _fastkernels = None

_FORCED = os.environ.get("VARNET4D_KERNELS", "auto").lower()
if _FORCED == "numpy":
    _impl = _kernels_np
elif _FORCED == "compiled":
    if _fastkernels is None:
        raise ImportError(
            "VARNET4D_KERNELS=compiled but the varnet4d._fastkernels extension "
            "is not built; install with the C toolchain or unset the variable"
        )
    _impl = _fastkernels
else:
    _impl = _fastkernels if _fastkernels is not None else _kernels_np


def backend_name() -> str:
    return _impl.BACKEND_NAME


def available_backends() -> list[str]:
    names = ["numpy"]
    if _fastkernels is not None:
        names.insert(0, "compiled")
    return names


def set_backend(name: str) -> None:
    """Switch kernel implementations at runtime (tests and benchmarks)."""
    global _impl
    if name == "numpy":
        _impl = _kernels_np
    elif name == "compiled":
        if _fastkernels is None:
            raise ValueError("compiled kernel extension is not available")
        _impl = _fastkernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def _c64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_fwd(x, w, stride: int = 1, circular: bool = True) -> np.ndarray:
    return _impl.conv2d_fwd(_c64(x), _c64(w), stride, circular)


def conv2d_igrad(g, w, H: int, W: int, stride: int = 1, circular: bool = True) -> np.ndarray:
    return _impl.conv2d_igrad(_c64(g), _c64(w), H, W, stride, circular)


def conv2d_wgrad(x, g, K: int, stride: int = 1, circular: bool = True) -> np.ndarray:
    return _impl.conv2d_wgrad(_c64(x), _c64(g), K, stride, circular)
