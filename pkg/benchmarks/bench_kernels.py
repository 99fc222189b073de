"""Time every kernel under the numpy and numba backends.

    python benchmarks/bench_kernels.py [--repeat 50]

Inputs are shaped like the ones the models and the generator feed in at the
default configuration.  Numba compile time is excluded (one warm-up call per
kernel) and reported separately.
"""
import argparse
import time

import numpy as np

from pcekit.kernels import backend_module


def cases(rng):
    z = rng.normal(size=(128 * 6 * 40, 40))
    p = np.exp(z) / np.exp(z).sum(-1, keepdims=True)
    x = rng.normal(size=(128 * 40, 48))
    gamma, beta = rng.normal(size=48), rng.normal(size=48)
    gates, c = rng.normal(size=(128, 4 * 64)), rng.normal(size=(128, 64))
    partner = np.full(21, -1, dtype=np.int64)
    partner[:5], partner[10:15] = np.arange(10, 15), np.arange(5)
    tok = rng.integers(-1, 20, size=40)
    idx = rng.integers(0, 20, size=400)
    gold, pred = rng.integers(0, 3, 5000), rng.integers(0, 3, 5000)

    def ln_bw(k):
        _, xhat, rstd = k.layer_norm(x, gamma, beta, 1e-5)
        return lambda: k.layer_norm_backward(x, xhat, rstd, gamma)

    def lstm_bw(k):
        _, _, cache = k.lstm_pointwise(gates, c)
        return lambda: k.lstm_pointwise_backward(c, c, cache, c)

    return {
        "softmax_rows": lambda k: lambda: k.softmax_rows(z),
        "softmax_rows_backward": lambda k: lambda: k.softmax_rows_backward(p, z),
        "layer_norm": lambda k: lambda: k.layer_norm(x, gamma, beta, 1e-5),
        "layer_norm_backward": ln_bw,
        "lstm_pointwise": lambda k: lambda: k.lstm_pointwise(gates, c),
        "lstm_pointwise_backward": lstm_bw,
        "transition_fill": lambda k: lambda: k.transition_fill(idx, 20, True),
        "token_bias_gather": lambda k: lambda: k.token_bias_gather(rng.normal(size=(20, 20)), tok),
        "gaze_walk": lambda k: lambda: k.gaze_walk(rng.random((400, 3)), 10, 10, partner, 0.1, 0.3, 0.6),
        "confusion_counts": lambda k: lambda: k.confusion_counts(gold, pred, 3),
    }


def bench(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    mods = {name: backend_module(name) for name in ("numpy", "numba")}
    print(f"{'kernel':<26}{'numpy us':>12}{'numba us':>12}{'speedup':>10}{'compile s':>11}")
    for name, make in cases(np.random.default_rng(0)).items():
        row = {}
        t0 = time.perf_counter()
        nb_fn = make(mods["numba"])
        nb_fn()
        compile_s = time.perf_counter() - t0
        row["numba"] = bench(nb_fn, args.repeat)
        np_fn = make(mods["numpy"])
        np_fn()
        row["numpy"] = bench(np_fn, args.repeat)
        print(f"{name:<26}{row['numpy'] * 1e6:>12.1f}{row['numba'] * 1e6:>12.1f}"
              f"{row['numpy'] / row['numba']:>9.1f}x{compile_s:>11.2f}")


if __name__ == "__main__":
    main()
