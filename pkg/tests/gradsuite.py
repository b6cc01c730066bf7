"""Per-layer finite-difference checks shared by the acceptance gate.

Each check takes a seed and returns the max relative error between the
hand-written backward pass and central differences of a random projection
of the layer output.
"""
import numpy as np

from rescnn import layers as L
from rescnn.gradcheck import joint_rel_error, numerical_grad
from rescnn.tensor import Rng


def _projected(forward, out_shape, rng):
    proj = rng.normal(size=out_shape)
    return proj, lambda: float((forward()[0] * proj).sum())


def _bn(ch, rng):
    p = L.BatchNormParams.fresh(ch)
    p.gamma[:] = rng.uniform(0.5, 1.5, ch)
    p.beta[:] = rng.normal(size=ch)
    p.running_mean[:] = rng.normal(scale=0.1, size=ch)
    p.running_var[:] = rng.uniform(0.5, 2.0, ch)
    return p


def conv1d(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 16, 2))
    p = L.Conv1dParams(rng.normal(size=(3, 2, 9)), rng.normal(size=3))
    proj, loss = _projected(lambda: L.conv1d(x, p), (2, 16, 3), rng)
    dx, dw, db = L.conv1d_grad(L.conv1d(x, p)[1], proj)
    return joint_rel_error([(dx, numerical_grad(loss, x)), (dw, numerical_grad(loss, p.weights)),
                            (db, numerical_grad(loss, p.bias))])


def batchnorm(seed, mode="train"):
    rng = np.random.default_rng(seed)
    x = rng.normal(1.0, 2.0, size=(3, 7, 4))
    p = _bn(4, rng)
    stats = p.running_mean.copy(), p.running_var.copy()

    def run():
        p.running_mean[:], p.running_var[:] = stats
        return L.batchnorm(x, p, mode)

    proj, loss = _projected(run, x.shape, rng)
    dx, dg, db = L.batchnorm_grad(run()[1], proj)
    return joint_rel_error([(dx, numerical_grad(loss, x)), (dg, numerical_grad(loss, p.gamma)),
                            (db, numerical_grad(loss, p.beta))])


def maxpool(seed):
    rng = np.random.default_rng(seed)
    # distinct values spaced far beyond the perturbation, so no window max changes hands
    x = rng.permutation(2 * 19 * 3).reshape(2, 19, 3) * 1e-2
    proj, loss = _projected(lambda: L.maxpool1d(x), (2, 4, 3), rng)
    return joint_rel_error([(L.maxpool1d_grad(L.maxpool1d(x)[1], proj), numerical_grad(loss, x))])


def lrelu(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 6))
    x[np.abs(x) < 1e-3] = 0.5
    proj, loss = _projected(lambda: L.lrelu(x, L.LRELU_ALPHA), x.shape, rng)
    return joint_rel_error([(L.lrelu_grad(L.lrelu(x, L.LRELU_ALPHA)[1], proj), numerical_grad(loss, x))])


def dense(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3)), rng.normal(size=3)
    proj, loss = _projected(lambda: L.dense(x, w, b), (5, 3), rng)
    dx, dw, db = L.dense_grad(L.dense(x, w, b)[1], proj)
    return joint_rel_error([(dx, numerical_grad(loss, x)), (dw, numerical_grad(loss, w)),
                            (db, numerical_grad(loss, b))])


def residual_block(seed, mode="train", cin=2, cout=4):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 32, cin))

    def conv(i, o, k):
        return L.Conv1dParams(rng.normal(size=(o, i, k)), rng.normal(size=o))

    p = L.ResidualBlockParams(conv1=conv(cin, cout, 9), bn1=_bn(cout, rng), conv2=conv(cout, cout, 9),
                              bn2=_bn(cout, rng), shortcut_proj=conv(cin, cout, 1), shortcut_bn=_bn(cout, rng))
    bns = {n: b for n, b in p.sublayers().items() if isinstance(b, L.BatchNormParams)}
    saved = {n: (b.running_mean.copy(), b.running_var.copy()) for n, b in bns.items()}

    def run():
        for n, (m, v) in saved.items():
            bns[n].running_mean[:], bns[n].running_var[:] = m, v
        return L.residual_block(x, p, mode, Rng(99))

    proj, loss = _projected(run, (2, 8, cout), rng)
    dx, grads = L.residual_block_grad(run()[1], proj)
    pairs = [(dx, numerical_grad(loss, x))]
    for lname, layer in p.sublayers().items():
        for pname, arr in layer.params().items():
            pairs.append((grads[f"{lname}.{pname}"], numerical_grad(loss, arr)))
    return joint_rel_error(pairs)


LAYER_CHECKS = {
    "conv1d": conv1d,
    "batchnorm[train]": batchnorm,
    "batchnorm[eval]": lambda s: batchnorm(s, "eval"),
    "maxpool": maxpool,
    "lrelu": lrelu,
    "dense": dense,
    "residual_block[train]": residual_block,
    "residual_block[eval]": lambda s: residual_block(s, "eval"),
}
