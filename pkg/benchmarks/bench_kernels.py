"""Time the numba and numpy kernel backends on the network's real layer sizes.

    python benchmarks/bench_kernels.py [--repeat N] [--batch B] [--json out.json]

Also runs one full forward+backward per dataset config under each backend.
Outputs are cross-checked between backends before timing.
"""
import argparse
import json
import platform
import time

import numpy as np

from rescnn import _kernels
from rescnn.layers import TRAIN
from rescnn.model import ResCnnConfig, build_model, model_backward, model_forward
from rescnn.optim import softmax_cross_entropy
from rescnn.tensor import Rng

# (name, length, in_ch, out_ch, k) for the widest convolutions in each config
CONV_CASES = [
    ("bonn block1 conv2", 3800, 8, 8, 9),
    ("bonn block2 conv2", 950, 16, 16, 9),
    ("bern block1 conv1", 9800, 2, 8, 9),
    ("bern block1 conv2", 9800, 8, 8, 9),
    ("bern block2 conv2", 2450, 16, 16, 9),
]
POOL_CASES = [("bonn block1 pool", 3800, 8), ("bern block1 pool", 9800, 8)]


def best_of(fn, repeat):
    fn()  # warm-up (and numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(batch, repeat, rng):
    rows = []
    for name, length, cin, cout, k in CONV_CASES:
        xpad = rng.normal(size=(batch, length + k - 1, cin))
        w, b = rng.normal(size=(cout, cin, k)), rng.normal(size=cout)
        dy = rng.normal(size=(batch, length, cout))
        ref_y = _kernels.numpy_kernels.conv_forward(xpad, w, b, 1)
        ref_g = _kernels.numpy_kernels.conv_backward(xpad, w, dy, 1)
        row = {"case": name, "op": "conv"}
        for backend, kern in _kernels.BACKENDS.items():
            assert np.allclose(kern.conv_forward(xpad, w, b, 1), ref_y, rtol=1e-12, atol=1e-10)
            assert all(np.allclose(a, r, rtol=1e-12, atol=1e-9)
                       for a, r in zip(kern.conv_backward(xpad, w, dy, 1), ref_g))
            row[f"{backend}_fwd_ms"] = 1e3 * best_of(lambda: kern.conv_forward(xpad, w, b, 1), repeat)
            row[f"{backend}_bwd_ms"] = 1e3 * best_of(lambda: kern.conv_backward(xpad, w, dy, 1), repeat)
        rows.append(row)
    for name, length, ch in POOL_CASES:
        x = rng.normal(size=(batch, length, ch))
        ref_y, ref_idx = _kernels.numpy_kernels.pool_forward(x, 4, 4)
        dy = rng.normal(size=ref_y.shape)
        row = {"case": name, "op": "pool"}
        for backend, kern in _kernels.BACKENDS.items():
            y, idx = kern.pool_forward(x, 4, 4)
            assert np.array_equal(y, ref_y) and np.array_equal(idx, ref_idx)
            row[f"{backend}_fwd_ms"] = 1e3 * best_of(lambda: kern.pool_forward(x, 4, 4), repeat)
            row[f"{backend}_bwd_ms"] = 1e3 * best_of(lambda: kern.pool_backward(idx, dy, length, 4, 4), repeat)
        rows.append(row)
    return rows


def bench_model(batch, repeat):
    rows = []
    for name, cfg in (("bonn", ResCnnConfig.bonn()), ("bern", ResCnnConfig.bern())):
        m = build_model(cfg, Rng(0))
        x = np.random.default_rng(0).normal(size=(batch, cfg.input_length, cfg.input_channels))
        y = np.arange(batch) % cfg.n_classes
        row = {"case": f"{name} train step", "op": "model"}
        for backend, kern in _kernels.BACKENDS.items():
            _kernels.active = kern

            def step():
                logits, trace = model_forward(m, x, TRAIN, Rng(1))
                model_backward(m, trace, softmax_cross_entropy(logits, y)[2])

            row[f"{backend}_step_ms"] = 1e3 * best_of(step, repeat)
        rows.append(row)
    _kernels.active = _kernels.numba_kernels if _kernels.USE_NUMBA else _kernels.numpy_kernels
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--json", help="also write results here")
    args = p.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not importable; nothing to compare")

    rows = bench_kernels(args.batch, args.repeat, np.random.default_rng(0))
    rows += bench_model(args.batch, max(1, args.repeat // 2))

    print(f"batch {args.batch}, best of {args.repeat}, {platform.processor() or platform.machine()}")
    print(f"{'case':<22}{'op':<7}{'numpy fwd':>11}{'numba fwd':>11}{'numpy bwd':>11}{'numba bwd':>11}")
    for r in rows:
        if r["op"] == "model":
            print(f"{r['case']:<22}{'step':<7}{r['numpy_step_ms']:>11.1f}{r['numba_step_ms']:>11.1f}")
        else:
            print(f"{r['case']:<22}{r['op']:<7}{r['numpy_fwd_ms']:>11.2f}{r['numba_fwd_ms']:>11.2f}"
                  f"{r['numpy_bwd_ms']:>11.2f}{r['numba_bwd_ms']:>11.2f}")
    print("times in ms")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"batch": args.batch, "repeat": args.repeat, "rows": rows}, f, indent=1)


if __name__ == "__main__":
    main()
