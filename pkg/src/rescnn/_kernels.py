"""Hot inner loops for convolution and max pooling.

Two interchangeable backends live here: numba ``@njit`` loops and a pure-numpy
path built on strided window views.  The numba backend is used when numba
imports and ``RESCNN_DISABLE_NUMBA`` is unset (or ``0``).  Both backends
operate on zero-padded input; padding is the caller's job.

Shapes:
    xpad  b x Lp x C      (already padded)
    w     O x C x K
    y     b x Lout x O    with Lout = (Lp - K) // stride + 1
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("RESCNN_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")
NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


# --------------------------------------------------------------------------
# numpy backend
# --------------------------------------------------------------------------

def _np_conv_forward(xpad, w, bias, stride):
    k = w.shape[2]
    win = sliding_window_view(xpad, k, axis=1)[:, ::stride]  # b x Lout x C x K
    return np.tensordot(win, w, axes=([2, 3], [1, 2])) + bias


def _np_conv_backward(xpad, w, dy, stride):
    k = w.shape[2]
    lout = dy.shape[1]
    win = sliding_window_view(xpad, k, axis=1)[:, ::stride]
    dw = np.tensordot(dy, win, axes=([0, 1], [0, 1]))  # O x C x K
    db = dy.sum(axis=(0, 1))
    dxpad = np.zeros_like(xpad)
    span = stride * (lout - 1) + 1
    for j in range(k):
        dxpad[:, j:j + span:stride, :] += dy @ w[:, :, j]
    return dxpad, dw, db


def _np_pool_forward(x, window, stride):
    win = sliding_window_view(x, window, axis=1)[:, ::stride]  # b x Lout x C x W
    idx = win.argmax(axis=3)  # first occurrence on ties
    y = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return y, idx


def _np_pool_backward(idx, dy, length, window, stride):
    b, lout, c = dy.shape
    dx = np.zeros((b, length, c))
    pos = idx + (np.arange(lout) * stride)[None, :, None]
    bi = np.arange(b)[:, None, None]
    ci = np.arange(c)[None, None, :]
    # windows may overlap when stride < window, so accumulate
    np.add.at(dx, (bi, pos, ci), dy)
    return dx


numpy_kernels = SimpleNamespace(
    name="numpy",
    conv_forward=_np_conv_forward,
    conv_backward=_np_conv_backward,
    pool_forward=_np_pool_forward,
    pool_backward=_np_pool_backward,
)


# --------------------------------------------------------------------------
# numba backend
# --------------------------------------------------------------------------

def _nb_conv_forward_impl(xpad, wt, bias, stride, lout):
    # wt is K x C x O so the innermost loop runs over contiguous output channels
    b, _, c = xpad.shape
    k, _, o = wt.shape
    y = np.empty((b, lout, o))
    for n in range(b):
        for t in range(lout):
            for q in range(o):
                y[n, t, q] = bias[q]
            base = t * stride
            for j in range(k):
                for ci in range(c):
                    xv = xpad[n, base + j, ci]
                    for q in range(o):
                        y[n, t, q] += xv * wt[j, ci, q]
    return y


def _nb_conv_backward_impl(xpad, wt, dy, stride):
    b, _, c = xpad.shape
    k, _, o = wt.shape
    lout = dy.shape[1]
    dxpad = np.zeros(xpad.shape)
    dwt = np.zeros(wt.shape)
    db = np.zeros(o)
    for n in range(b):
        for t in range(lout):
            base = t * stride
            for q in range(o):
                db[q] += dy[n, t, q]
            for j in range(k):
                for ci in range(c):
                    xv = xpad[n, base + j, ci]
                    acc = 0.0
                    for q in range(o):
                        g = dy[n, t, q]
                        dwt[j, ci, q] += xv * g
                        acc += wt[j, ci, q] * g
                    dxpad[n, base + j, ci] += acc
    return dxpad, dwt, db


def _nb_pool_forward_impl(x, window, stride):
    b, length, c = x.shape
    lout = (length - window) // stride + 1
    y = np.empty((b, lout, c))
    idx = np.empty((b, lout, c), dtype=np.int64)
    for n in range(b):
        for t in range(lout):
            base = t * stride
            for ci in range(c):
                best = x[n, base, ci]
                arg = 0
                for j in range(1, window):
                    v = x[n, base + j, ci]
                    if v > best:
                        best = v
                        arg = j
                y[n, t, ci] = best
                idx[n, t, ci] = arg
    return y, idx


def _nb_pool_backward_impl(idx, dy, length, stride):
    b, lout, c = dy.shape
    dx = np.zeros((b, length, c))
    for n in range(b):
        for t in range(lout):
            base = t * stride
            for ci in range(c):
                dx[n, base + idx[n, t, ci], ci] += dy[n, t, ci]
    return dx


if NUMBA_AVAILABLE:
    _jit = numba.njit(cache=True, nogil=True)
    _nb_conv_forward_jit = _jit(_nb_conv_forward_impl)
    _nb_conv_backward_jit = _jit(_nb_conv_backward_impl)
    _nb_pool_forward_jit = _jit(_nb_pool_forward_impl)
    _nb_pool_backward_jit = _jit(_nb_pool_backward_impl)
else:  # pragma: no cover
    _nb_conv_forward_jit = _nb_conv_forward_impl
    _nb_conv_backward_jit = _nb_conv_backward_impl
    _nb_pool_forward_jit = _nb_pool_forward_impl
    _nb_pool_backward_jit = _nb_pool_backward_impl


def _nb_conv_forward(xpad, w, bias, stride):
    lout = (xpad.shape[1] - w.shape[2]) // stride + 1
    wt = np.ascontiguousarray(w.transpose(2, 1, 0))
    return _nb_conv_forward_jit(np.ascontiguousarray(xpad), wt, np.ascontiguousarray(bias), stride, lout)


def _nb_conv_backward(xpad, w, dy, stride):
    wt = np.ascontiguousarray(w.transpose(2, 1, 0))
    dxpad, dwt, db = _nb_conv_backward_jit(np.ascontiguousarray(xpad), wt, np.ascontiguousarray(dy), stride)
    return dxpad, np.ascontiguousarray(dwt.transpose(2, 1, 0)), db


def _nb_pool_forward(x, window, stride):
    return _nb_pool_forward_jit(np.ascontiguousarray(x), window, stride)


def _nb_pool_backward(idx, dy, length, window, stride):
    return _nb_pool_backward_jit(idx, np.ascontiguousarray(dy), length, stride)


numba_kernels = SimpleNamespace(
    name="numba",
    conv_forward=_nb_conv_forward,
    conv_backward=_nb_conv_backward,
    pool_forward=_nb_pool_forward,
    pool_backward=_nb_pool_backward,
)

active = numba_kernels if USE_NUMBA else numpy_kernels
BACKENDS = {"numpy": numpy_kernels, "numba": numba_kernels}
