"""Pure-numpy convolution kernels (fallback backend).

Three kernels cover every hot path of the model: the 2-D convolution
forward pass and its two adjoints (gradient w.r.t. input, gradient
w.r.t. weights).  All operate on float64 arrays shaped

    x : (B, C_in, H, W)     input fields
    w : (C_out, C_in, K, K) kernels, K odd
    y : (B, C_out, Ho, Wo)  outputs

with implicit padding of K//2 on each side ("circular" wraps the field,
"zero" pads with zeros) and an integer stride, so that for stride 1 the
output has the input's spatial shape.  The forward pass is im2col plus a
BLAS matmul; the adjoints are the exact transposes of that linear map,
which the autodiff layer relies on (see the dot-product tests).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"


def _out_hw(H: int, W: int, K: int, stride: int) -> tuple[int, int]:
    p = K // 2
    return (H + 2 * p - K) // stride + 1, (W + 2 * p - K) // stride + 1


def _pad(x: np.ndarray, p: int, circular: bool) -> np.ndarray:
    if p == 0:
        return x
    mode = "wrap" if circular else "constant"
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode=mode)


def _unpad_fold(gxp: np.ndarray, p: int, circular: bool) -> np.ndarray:
    """Adjoint of _pad: crop, and for circular padding fold the borders back."""
    if p == 0:
        return gxp
    if not circular:
        return np.ascontiguousarray(gxp[:, :, p:-p, p:-p])
    H = gxp.shape[2] - 2 * p
    W = gxp.shape[3] - 2 * p
    # fold rows first (full padded width), then columns
    gxp[:, :, p : 2 * p, :] += gxp[:, :, H + p :, :]
    gxp[:, :, H : H + p, :] += gxp[:, :, :p, :]
    core = gxp[:, :, p : H + p, :]
    core[:, :, :, p : 2 * p] += core[:, :, :, W + p :]
    core[:, :, :, W : W + p] += core[:, :, :, :p]
    return np.ascontiguousarray(core[:, :, :, p : W + p])


def _im2col(xp: np.ndarray, K: int, stride: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B, C*K*K, Ho*Wo) patch matrix."""
    win = sliding_window_view(xp, (K, K), axis=(2, 3))  # (B, C, Ho*, Wo*, K, K)
    win = win[:, :, ::stride, ::stride, :, :]
    B, C, Ho, Wo = win.shape[:4]
    col = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * K * K, Ho * Wo)
    return np.ascontiguousarray(col)


def conv2d_fwd(x: np.ndarray, w: np.ndarray, stride: int, circular: bool) -> np.ndarray:
    B, C_in, H, W = x.shape
    C_out, _, K, _ = w.shape
    Ho, Wo = _out_hw(H, W, K, stride)
    col = _im2col(_pad(x, K // 2, circular), K, stride)
    wmat = w.reshape(C_out, C_in * K * K)
    y = np.einsum("ok,bkn->bon", wmat, col, optimize=True)
    return np.ascontiguousarray(y.reshape(B, C_out, Ho, Wo))


def conv2d_igrad(
    g: np.ndarray, w: np.ndarray, H: int, W: int, stride: int, circular: bool
) -> np.ndarray:
    """Adjoint of conv2d_fwd in x: g (B, C_out, Ho, Wo) -> (B, C_in, H, W)."""
    B = g.shape[0]
    C_out, C_in, K, _ = w.shape
    p = K // 2
    Ho, Wo = _out_hw(H, W, K, stride)
    gf = g.reshape(B, C_out, Ho * Wo)
    wmat = w.reshape(C_out, C_in * K * K)
    col = np.einsum("ok,bon->bkn", wmat, gf, optimize=True)
    col = col.reshape(B, C_in, K, K, Ho, Wo)
    gxp = np.zeros((B, C_in, H + 2 * p, W + 2 * p))
    for u in range(K):
        for v in range(K):
            gxp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride] += col[
                :, :, u, v, :, :
            ]
    return _unpad_fold(gxp, p, circular)


def conv2d_wgrad(
    x: np.ndarray, g: np.ndarray, K: int, stride: int, circular: bool
) -> np.ndarray:
    """Adjoint of conv2d_fwd in w: (x, g) -> (C_out, C_in, K, K)."""
    B, C_in = x.shape[:2]
    C_out = g.shape[1]
    col = _im2col(_pad(x, K // 2, circular), K, stride)
    gf = g.reshape(B, C_out, -1)
    gw = np.einsum("bon,bkn->ok", gf, col, optimize=True)
    return np.ascontiguousarray(gw.reshape(C_out, C_in, K, K))
