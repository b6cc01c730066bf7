"""Layer primitives with hand-written forward and backward passes.

Every layer is a pair of plain functions::

    y, ctx = layer(x, params, ...)
    dx, *dparams = layer_grad(ctx, dy)

``ctx`` carries whatever the backward pass needs and may be consumed once.
Signal tensors are batch x time x channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ContextError, ShapeError
from .tensor import Rng, Tensor, reduce_moments

TRAIN = "train"
EVAL = "eval"
MODES = (TRAIN, EVAL)

LRELU_ALPHA = 0.01
BN_MOMENTUM = 0.9
BN_EPS = 1e-10


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


class Ctx:
    """Forward-pass cache that a single backward call consumes."""

    kind = "ctx"

    def __init__(self, **cached):
        self.__dict__.update(cached)
        self._consumed = False

    def consume(self, kind):
        if kind != self.kind:
            raise ContextError(f"{kind} backward received a {self.kind} context")
        if self._consumed:
            raise ContextError(f"{self.kind} context already consumed by a backward pass")
        self._consumed = True


def _ctx(kind, **cached):
    c = Ctx(**cached)
    c.kind = kind
    return c


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------

@dataclass
class Conv1dParams:
    weights: Tensor  # out_ch x in_ch x k
    bias: Tensor     # out_ch
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.weights.ndim != 3:
            raise ShapeError(f"conv weights must be out x in x k, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"conv bias {self.bias.shape} does not match {self.weights.shape[0]} outputs")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.padding == "same" and self.weights.shape[2] % 2 == 0:
            raise ValueError("same padding needs an odd kernel size")

    @classmethod
    def zeros(cls, in_ch, out_ch, k, **kw):
        return cls(np.zeros((out_ch, in_ch, k)), np.zeros(out_ch), **kw)

    @property
    def in_ch(self):
        return self.weights.shape[1]

    @property
    def out_ch(self):
        return self.weights.shape[0]

    @property
    def kernel_size(self):
        return self.weights.shape[2]

    def params(self):
        return {"weight": self.weights, "bias": self.bias}


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("batchnorm momentum must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("batchnorm eps must be positive")

    @classmethod
    def fresh(cls, ch, **kw):
        return cls(np.ones(ch), np.zeros(ch), np.zeros(ch), np.ones(ch), **kw)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


@dataclass
class ResidualBlockParams:
    conv1: Conv1dParams
    bn1: BatchNormParams
    conv2: Conv1dParams
    bn2: BatchNormParams
    shortcut_proj: Optional[Conv1dParams] = None
    shortcut_bn: Optional[BatchNormParams] = None
    pool_window: int = 4
    pool_stride: int = 4
    dropout_rate: float = 0.5
    lrelu_alpha: float = LRELU_ALPHA

    def __post_init__(self):
        in_ch, out_ch = self.conv1.in_ch, self.conv2.out_ch
        if (self.shortcut_proj is None) != (in_ch == out_ch):
            raise ValueError("shortcut projection is required exactly when in_ch != out_ch")
        if (self.shortcut_proj is None) != (self.shortcut_bn is None):
            raise ValueError("shortcut projection and its batchnorm come together")
        if self.shortcut_proj is not None and self.shortcut_proj.kernel_size != 1:
            raise ValueError("shortcut projection must be a 1x1 convolution")
        for conv in (self.conv1, self.conv2):
            if conv.padding != "same" or conv.stride != 1:
                raise ValueError("block convolutions must use same padding and stride 1")

    def sublayers(self):
        out = {"conv1": self.conv1, "bn1": self.bn1, "conv2": self.conv2, "bn2": self.bn2}
        if self.shortcut_proj is not None:
            out["shortcut_conv"] = self.shortcut_proj
            out["shortcut_bn"] = self.shortcut_bn
        return out


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def conv_output_length(length, k, stride=1, padding="same"):
    pad = (k - 1) // 2 if padding == "same" else 0
    return (length + 2 * pad - k) // stride + 1


def conv1d(x: Tensor, p: Conv1dParams):
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects batch x time x channel, got {x.shape}")
    if x.shape[2] != p.in_ch:
        raise ShapeError(f"conv1d channel mismatch: input has {x.shape[2]}, weights expect {p.in_ch}")
    k = p.kernel_size
    pad = (k - 1) // 2 if p.padding == "same" else 0
    lout = conv_output_length(x.shape[1], k, p.stride, p.padding)
    if lout < 1:
        raise ShapeError(f"conv1d output would be empty (L={x.shape[1]}, k={k}, padding={p.padding})")
    xpad = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    y = _kernels.active.conv_forward(xpad, p.weights, p.bias, p.stride)
    return y, _ctx("conv1d", xpad=xpad, pad=pad, params=p)


def conv1d_grad(ctx, dy: Tensor):
    ctx.consume("conv1d")
    p = ctx.params
    dxpad, dw, db = _kernels.active.conv_backward(ctx.xpad, p.weights, dy, p.stride)
    dx = dxpad[:, ctx.pad:dxpad.shape[1] - ctx.pad] if ctx.pad else dxpad
    return dx, dw, db


# --------------------------------------------------------------------------
# batch normalization
# --------------------------------------------------------------------------

def batchnorm(x: Tensor, p: BatchNormParams, mode: str):
    """Per-channel normalization over the batch and time axes.

    In train mode the batch statistics normalize ``x`` and the running
    averages move towards them; eval mode reads the running averages and
    leaves them untouched.
    """
    _check_mode(mode)
    if x.ndim != 3 or x.shape[2] != p.gamma.shape[0]:
        raise ShapeError(f"batchnorm expects b x L x {p.gamma.shape[0]}, got {x.shape}")
    if mode == TRAIN:
        n = x.shape[0] * x.shape[1]
        if n < 2:
            raise ValueError("train-mode batchnorm needs at least two values per channel")
        flat = x.reshape(n, x.shape[2])
        mean, var = reduce_moments(flat, axis=0)
        p.running_mean *= p.momentum
        p.running_mean += (1.0 - p.momentum) * mean
        p.running_var *= p.momentum
        p.running_var += (1.0 - p.momentum) * var
    else:
        mean, var = p.running_mean.copy(), p.running_var.copy()
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean) * inv_std
    y = p.gamma * xhat + p.beta
    return y, _ctx("batchnorm", xhat=xhat, inv_std=inv_std, mode=mode, gamma=p.gamma)


def batchnorm_grad(ctx, dy: Tensor):
    ctx.consume("batchnorm")
    xhat = ctx.xhat
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    scale = ctx.gamma * ctx.inv_std
    if ctx.mode == EVAL:
        return dy * scale, dgamma, dbeta
    n = dy.shape[0] * dy.shape[1]
    dx = scale / n * (n * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# pooling, activation, dropout
# --------------------------------------------------------------------------

def pool_output_length(length, window=4, stride=4):
    return (length - window) // stride + 1


def maxpool1d(x: Tensor, window: int = 4, stride: int = 4):
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects batch x time x channel, got {x.shape}")
    if x.shape[1] < window:
        raise ShapeError(f"maxpool1d needs length >= {window}, got {x.shape[1]}")
    y, idx = _kernels.active.pool_forward(x, window, stride)
    return y, _ctx("maxpool1d", idx=idx, length=x.shape[1], window=window, stride=stride)


def maxpool1d_grad(ctx, dy: Tensor):
    ctx.consume("maxpool1d")
    return _kernels.active.pool_backward(ctx.idx, dy, ctx.length, ctx.window, ctx.stride)


def lrelu(x: Tensor, alpha: float = LRELU_ALPHA):
    if alpha < 0:
        raise ValueError("lrelu slope must be non-negative")
    positive = x >= 0
    y = np.where(positive, x, alpha * x)
    return y, _ctx("lrelu", positive=positive, alpha=alpha)


def lrelu_grad(ctx, dy: Tensor):
    ctx.consume("lrelu")
    return np.where(ctx.positive, dy, ctx.alpha * dy)


def dropout(x: Tensor, rate: float, mode: str, rng: Optional[Rng] = None):
    """Inverted dropout: surviving units are scaled by 1/(1-rate) at train time."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == EVAL or rate == 0.0:
        return x, _ctx("dropout", mask=None)
    if rng is None:
        raise ValueError("train-mode dropout needs an Rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, _ctx("dropout", mask=mask)


def dropout_grad(ctx, dy: Tensor):
    ctx.consume("dropout")
    return dy if ctx.mask is None else dy * ctx.mask


# --------------------------------------------------------------------------
# dense
# --------------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, bias: Tensor):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise ShapeError(f"dense shape mismatch: x {x.shape}, W {w.shape}, bias {bias.shape}")
    return x @ w + bias, _ctx("dense", x=x, w=w)


def dense_grad(ctx, dy: Tensor):
    ctx.consume("dense")
    return dy @ ctx.w.T, ctx.x.T @ dy, dy.sum(axis=0)


# --------------------------------------------------------------------------
# residual block
# --------------------------------------------------------------------------

def residual_block_output_length(length, window=4, stride=4):
    return pool_output_length(length, window, stride)


def residual_block(x: Tensor, p: ResidualBlockParams, mode: str, rng: Optional[Rng] = None):
    """conv-bn-lrelu-conv-bn, add the shortcut, lrelu, max-pool, dropout."""
    _check_mode(mode)
    if x.shape[1] < p.pool_window:
        raise ShapeError(f"residual block needs length >= {p.pool_window}, got {x.shape[1]}")
    c1, c1_ctx = conv1d(x, p.conv1)
    b1, b1_ctx = batchnorm(c1, p.bn1, mode)
    h, h_ctx = lrelu(b1, p.lrelu_alpha)
    c2, c2_ctx = conv1d(h, p.conv2)
    r, r_ctx = batchnorm(c2, p.bn2, mode)
    if p.shortcut_proj is None:
        s, sc_ctx, sb_ctx = x, None, None
    else:
        sc, sc_ctx = conv1d(x, p.shortcut_proj)
        s, sb_ctx = batchnorm(sc, p.shortcut_bn, mode)
    a, a_ctx = lrelu(r + s, p.lrelu_alpha)
    pooled, pool_ctx = maxpool1d(a, p.pool_window, p.pool_stride)
    y, drop_ctx = dropout(pooled, p.dropout_rate, mode, rng)
    return y, _ctx(
        "residual_block",
        params=p,
        parts=(c1_ctx, b1_ctx, h_ctx, c2_ctx, r_ctx, sc_ctx, sb_ctx, a_ctx, pool_ctx, drop_ctx),
    )


def residual_block_grad(ctx, dy: Tensor):
    """Returns ``(dx, grads)`` where ``grads`` maps ``sublayer.param`` names to arrays."""
    ctx.consume("residual_block")
    c1_ctx, b1_ctx, h_ctx, c2_ctx, r_ctx, sc_ctx, sb_ctx, a_ctx, pool_ctx, drop_ctx = ctx.parts
    grads = {}
    d = dropout_grad(drop_ctx, dy)
    d = maxpool1d_grad(pool_ctx, d)
    dz = lrelu_grad(a_ctx, d)

    dc2, grads["bn2.gamma"], grads["bn2.beta"] = batchnorm_grad(r_ctx, dz)
    dh, grads["conv2.weight"], grads["conv2.bias"] = conv1d_grad(c2_ctx, dc2)
    db1 = lrelu_grad(h_ctx, dh)
    dc1, grads["bn1.gamma"], grads["bn1.beta"] = batchnorm_grad(b1_ctx, db1)
    dx, grads["conv1.weight"], grads["conv1.bias"] = conv1d_grad(c1_ctx, dc1)

    if sc_ctx is None:
        dx = dx + dz
    else:
        dsc, grads["shortcut_bn.gamma"], grads["shortcut_bn.beta"] = batchnorm_grad(sb_ctx, dz)
        dxs, grads["shortcut_conv.weight"], grads["shortcut_conv.bias"] = conv1d_grad(sc_ctx, dsc)
        dx = dx + dxs
    return dx, grads


def block_signature(ctx):
    """Active-piece pattern of a residual block forward (LReLU signs, pool argmaxes).

    Two forwards with equal signatures lie on the same smooth piece of the
    block's piecewise-smooth map.
    """
    parts = ctx.parts
    return (parts[2].positive.copy(), parts[7].positive.copy(), parts[8].idx.copy())
