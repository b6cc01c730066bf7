"""The two-block residual 1D CNN: construction, forward/backward, parameter count."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import layers as L
from .errors import ContextError, ShapeError
from .optim import xavier_init
from .tensor import Rng, Tensor


@dataclass
class ResCnnConfig:
    input_length: int = 9800
    input_channels: int = 2
    n_classes: int = 2
    kernel_size: int = 9
    block_channels: tuple = (8, 16)
    pool_window: int = 4
    dropout_rate: float = 0.5
    lrelu_alpha: float = L.LRELU_ALPHA
    fc_hidden: int = 200

    def __post_init__(self):
        self.block_channels = tuple(int(c) for c in self.block_channels)
        if len(self.block_channels) != 2:
            raise ValueError("the network has exactly two residual blocks")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.input_length < self.pool_window ** 2:
            raise ValueError(
                f"input_length {self.input_length} too short for two /{self.pool_window} poolings"
            )
        if self.input_channels < 1 or self.n_classes < 2 or self.fc_hidden < 1:
            raise ValueError("channels, classes and hidden units must be positive (classes >= 2)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @classmethod
    def bonn(cls, **kw):
        return cls(**{"input_length": 3800, "input_channels": 1, "n_classes": 3, **kw})

    @classmethod
    def bern(cls, **kw):
        return cls(**{"input_length": 9800, "input_channels": 2, "n_classes": 2, **kw})

    def block_lengths(self):
        """Temporal lengths entering block 1, leaving block 1 and leaving block 2."""
        l0 = self.input_length
        l1 = L.pool_output_length(l0, self.pool_window, self.pool_window)
        l2 = L.pool_output_length(l1, self.pool_window, self.pool_window)
        return l0, l1, l2

    @property
    def flatten_width(self):
        return self.block_lengths()[2] * self.block_channels[1]

    def to_dict(self):
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        return d


@dataclass
class ResCnnModel:
    config: ResCnnConfig
    block1: L.ResidualBlockParams
    block2: L.ResidualBlockParams
    fc_hidden_w: Tensor
    fc_hidden_b: Tensor
    fc_hidden_bn: L.BatchNormParams
    fc_out_w: Tensor
    fc_out_b: Tensor
    meta: dict = field(default_factory=dict)

    def parameters(self) -> dict:
        """Learnable arrays keyed by dotted name (live references, not copies)."""
        out = {}
        for bname, block in (("block1", self.block1), ("block2", self.block2)):
            for lname, layer in block.sublayers().items():
                for pname, arr in layer.params().items():
                    out[f"{bname}.{lname}.{pname}"] = arr
        out["fc_hidden.weight"] = self.fc_hidden_w
        out["fc_hidden.bias"] = self.fc_hidden_b
        out["fc_hidden_bn.gamma"] = self.fc_hidden_bn.gamma
        out["fc_hidden_bn.beta"] = self.fc_hidden_bn.beta
        out["fc_out.weight"] = self.fc_out_w
        out["fc_out.bias"] = self.fc_out_b
        return out

    def buffers(self) -> dict:
        """Batchnorm running statistics keyed by dotted name."""
        out = {}
        for bname, block in (("block1", self.block1), ("block2", self.block2)):
            for lname, layer in block.sublayers().items():
                if isinstance(layer, L.BatchNormParams):
                    for k, arr in layer.buffers().items():
                        out[f"{bname}.{lname}.{k}"] = arr
        for k, arr in self.fc_hidden_bn.buffers().items():
            out[f"fc_hidden_bn.{k}"] = arr
        return out

    def state_arrays(self) -> dict:
        return {**self.parameters(), **self.buffers()}


def _conv(in_ch, out_ch, k, rng):
    w = xavier_init(in_ch * k, out_ch * k, (out_ch, in_ch, k), rng)
    return L.Conv1dParams(w, np.zeros(out_ch), stride=1, padding="same")


def _block(in_ch, out_ch, cfg, rng):
    k = cfg.kernel_size
    conv1 = _conv(in_ch, out_ch, k, rng)
    conv2 = _conv(out_ch, out_ch, k, rng)
    proj = proj_bn = None
    if in_ch != out_ch:
        proj = _conv(in_ch, out_ch, 1, rng)
        proj_bn = L.BatchNormParams.fresh(out_ch)
    return L.ResidualBlockParams(
        conv1=conv1,
        bn1=L.BatchNormParams.fresh(out_ch),
        conv2=conv2,
        bn2=L.BatchNormParams.fresh(out_ch),
        shortcut_proj=proj,
        shortcut_bn=proj_bn,
        pool_window=cfg.pool_window,
        pool_stride=cfg.pool_window,
        dropout_rate=cfg.dropout_rate,
        lrelu_alpha=cfg.lrelu_alpha,
    )


def build_model(cfg: ResCnnConfig, rng: Rng) -> ResCnnModel:
    """Xavier-uniform weights, zero biases, batchnorm gamma 1 / beta 0."""
    c1, c2 = cfg.block_channels
    block1 = _block(cfg.input_channels, c1, cfg, rng)
    block2 = _block(c1, c2, cfg, rng)
    flat = cfg.flatten_width
    fc_hidden_w = xavier_init(flat, cfg.fc_hidden, (flat, cfg.fc_hidden), rng)
    fc_out_w = xavier_init(cfg.fc_hidden, cfg.n_classes, (cfg.fc_hidden, cfg.n_classes), rng)
    return ResCnnModel(
        config=cfg,
        block1=block1,
        block2=block2,
        fc_hidden_w=fc_hidden_w,
        fc_hidden_b=np.zeros(cfg.fc_hidden),
        fc_hidden_bn=L.BatchNormParams.fresh(cfg.fc_hidden),
        fc_out_w=fc_out_w,
        fc_out_b=np.zeros(cfg.n_classes),
    )


@dataclass
class Trace:
    model_id: int
    mode: str
    block1: L.Ctx
    block2: L.Ctx
    flat_shape: tuple
    fc_hidden: L.Ctx
    fc_hidden_bn: L.Ctx
    fc_hidden_act: L.Ctx
    fc_out: L.Ctx
    hidden: Tensor  # post-LReLU hidden FC activations, b x fc_hidden
    consumed: bool = False


def model_forward(m: ResCnnModel, x: Tensor, mode: str, rng: Optional[Rng] = None):
    """Returns ``(logits, trace)``; softmax is left to the loss / caller."""
    cfg = m.config
    if x.ndim != 3 or x.shape[1:] != (cfg.input_length, cfg.input_channels):
        raise ShapeError(
            f"model expects b x {cfg.input_length} x {cfg.input_channels}, got {x.shape}"
        )
    h1, ctx1 = L.residual_block(x, m.block1, mode, rng)
    h2, ctx2 = L.residual_block(h1, m.block2, mode, rng)
    flat = h2.reshape(h2.shape[0], -1)
    z, fc_ctx = L.dense(flat, m.fc_hidden_w, m.fc_hidden_b)
    zn, bn_ctx = L.batchnorm(z[:, None, :], m.fc_hidden_bn, mode)
    hidden, act_ctx = L.lrelu(zn[:, 0, :], cfg.lrelu_alpha)
    logits, out_ctx = L.dense(hidden, m.fc_out_w, m.fc_out_b)
    trace = Trace(id(m), mode, ctx1, ctx2, h2.shape, fc_ctx, bn_ctx, act_ctx, out_ctx, hidden)
    return logits, trace


def model_backward(m: ResCnnModel, trace: Trace, dlogits: Tensor) -> dict:
    """Gradient for every entry of ``m.parameters()``; consumes ``trace``."""
    if trace.model_id != id(m):
        raise ContextError("trace was produced by a different model")
    if trace.consumed:
        raise ContextError("trace already consumed")
    trace.consumed = True
    g = {}
    dh, g["fc_out.weight"], g["fc_out.bias"] = L.dense_grad(trace.fc_out, dlogits)
    dzn = L.lrelu_grad(trace.fc_hidden_act, dh)
    dz, g["fc_hidden_bn.gamma"], g["fc_hidden_bn.beta"] = L.batchnorm_grad(trace.fc_hidden_bn, dzn[:, None, :])
    dflat, g["fc_hidden.weight"], g["fc_hidden.bias"] = L.dense_grad(trace.fc_hidden, dz[:, 0, :])
    dh2 = dflat.reshape(trace.flat_shape)
    dh1, g2 = L.residual_block_grad(trace.block2, dh2)
    _, g1 = L.residual_block_grad(trace.block1, dh1)
    g.update({f"block2.{k}": v for k, v in g2.items()})
    g.update({f"block1.{k}": v for k, v in g1.items()})
    params = m.parameters()
    return {k: g[k] for k in params}


def count_params(m) -> int:
    """Total learnable scalars. Accepts a model or any object exposing ``parameters()``."""
    return int(sum(p.size for p in m.parameters().values()))


def trace_signature(trace: Trace):
    """Active-piece pattern of a whole-network forward; see ``layers.block_signature``."""
    return (
        L.block_signature(trace.block1),
        L.block_signature(trace.block2),
        trace.fc_hidden_act.positive.copy(),
    )
