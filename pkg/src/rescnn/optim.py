"""Initialization, loss, Adam and the step-decay learning-rate schedule."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError
from .tensor import Rng, Tensor, uniform


def xavier_init(fan_in: int, fan_out: int, shape, rng: Rng) -> Tensor:
    """Glorot-uniform draw on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].

    For a convolution pass ``fan_in = in_ch * k`` and ``fan_out = out_ch * k``.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be positive, got fan_in={fan_in}, fan_out={fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return uniform(rng, -bound, bound, shape)


def softmax(logits: Tensor) -> Tensor:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[float, Tensor, Tensor]:
    """Mean cross-entropy over the batch, the class probabilities and d(loss)/d(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    b, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(b)
    loss = -float(log_probs[rows, labels].mean())
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= b
    return loss, probs, dlogits


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> AdamState:
    """Apply one Adam update to ``params`` in place.

    Every gradient is validated before any parameter moves, so a bad gradient
    leaves both the parameters and the state untouched.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if set(grads) != set(params) or set(state.m) != set(params):
        raise ShapeError("parameter, gradient and optimizer-state names differ")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"{name}: parameter {p.shape}, gradient {g.shape}, moment {state.m[name].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}; step aborted")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 0.01
    milestones: tuple = (10, 30, 50)
    factor: float = 0.1

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {ms}")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("decay factor must lie in (0, 1)")
        if self.base_lr <= 0:
            raise ValueError("base learning rate must be positive")
        object.__setattr__(self, "milestones", ms)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate for a 0-indexed epoch; decay takes effect at each milestone epoch."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    n_decays = bisect.bisect_right(schedule.milestones, epoch)
    lr = schedule.base_lr
    for _ in range(n_decays):
        lr *= schedule.factor
    return lr
