"""Whole-network finite-difference check shared by the model and acceptance tests."""
import numpy as np

from rescnn.gradcheck import EPS, joint_rel_error, sample_indices
from rescnn.model import ResCnnConfig, build_model, model_backward, model_forward, trace_signature
from rescnn.optim import softmax_cross_entropy
from rescnn.tensor import Rng

TINY = dict(input_length=64, input_channels=1, n_classes=3, block_channels=(4, 6), fc_hidden=8)


def _same_piece(a, b):
    return all(
        all(np.array_equal(x, y) for x, y in zip(sa, sb)) if isinstance(sa, tuple) else np.array_equal(sa, sb)
        for sa, sb in zip(a, b)
    )


def model_gradcheck(seed, mode="train", per_tensor=25, batch=4, **overrides):
    """Max joint relative error of model_backward vs central differences of the loss.

    Coordinates whose perturbation moves the forward onto a different smooth
    piece (LReLU sign flip or pooling argmax change) are skipped.  Returns
    ``(error, n_checked, n_skipped)``.
    """
    cfg = ResCnnConfig(**{**TINY, **overrides})
    m = build_model(cfg, Rng(seed))
    rng = np.random.default_rng(seed)
    for name, arr in m.parameters().items():
        if name.endswith(".bias") or name.endswith(".beta"):
            arr[:] = rng.normal(scale=0.1, size=arr.shape)
    x = rng.normal(size=(batch, cfg.input_length, cfg.input_channels))
    labels = rng.integers(0, cfg.n_classes, batch)

    def forward():
        return model_forward(m, x, mode, Rng(seed + 1000))

    def loss_and_sig():
        logits, trace = forward()
        return softmax_cross_entropy(logits, labels)[0], trace_signature(trace)

    logits, trace = forward()
    base_sig = trace_signature(trace)
    _, _, dlogits = softmax_cross_entropy(logits, labels)
    grads = model_backward(m, trace, dlogits)

    pick = np.random.default_rng(seed + 1)
    pairs, skipped, checked = [], 0, 0
    for name, arr in m.parameters().items():
        numeric = np.full(arr.shape, np.nan)
        flat, nflat = arr.reshape(-1), numeric.reshape(-1)
        for i in sample_indices(arr.size, per_tensor, pick):
            orig = flat[i]
            flat[i] = orig + EPS
            fp, sp = loss_and_sig()
            flat[i] = orig - EPS
            fm, sm = loss_and_sig()
            flat[i] = orig
            if not (_same_piece(sp, base_sig) and _same_piece(sm, base_sig)):
                skipped += 1
                continue
            nflat[i] = (fp - fm) / (2 * EPS)
            checked += 1
        pairs.append((grads[name], numeric))
    return joint_rel_error(pairs), checked, skipped
