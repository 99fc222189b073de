import os
import subprocess
import sys

import numpy as np
import pytest

from pcekit import kernels

nb = kernels.backend_module("numba")
npk = kernels.backend_module("numpy")


def test_backend_flag_selects_numpy():
    code = "from pcekit import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, PCEKIT_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["PCEKIT_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.backend_module("cuda")


@pytest.mark.parametrize("seed", range(5))
def test_softmax_parity(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(7, 11)) * 5
    z[0, :5] = -1e9
    g = r.normal(size=z.shape)
    p1, p2 = nb.softmax_rows(z), npk.softmax_rows(z)
    np.testing.assert_allclose(p1, p2, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(p1.sum(1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(nb.softmax_rows_backward(p1, g), npk.softmax_rows_backward(p2, g), rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_parity(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(9, 6)) * 3 + 1
    gamma, beta = r.normal(size=6), r.normal(size=6)
    a, b = nb.layer_norm(x, gamma, beta, 1e-5), npk.layer_norm(x, gamma, beta, 1e-5)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)
    g = r.normal(size=x.shape)
    for u, v in zip(nb.layer_norm_backward(g, a[1], a[2], gamma), npk.layer_norm_backward(g, b[1], b[2], gamma)):
        np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_lstm_pointwise_parity(seed):
    r = np.random.default_rng(seed)
    gates, c = r.normal(size=(5, 16)) * 2, r.normal(size=(5, 4))
    a, b = nb.lstm_pointwise(gates, c), npk.lstm_pointwise(gates, c)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)
    dh, dc = r.normal(size=(5, 4)), r.normal(size=(5, 4))
    for u, v in zip(nb.lstm_pointwise_backward(dh, dc, a[2], c), npk.lstm_pointwise_backward(dh, dc, b[2], c)):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("counted", [False, True])
def test_transition_fill_parity(counted):
    r = np.random.default_rng(0)
    for _ in range(50):
        k = int(r.integers(1, 7))
        idx = r.integers(0, k, size=int(r.integers(0, 30)))
        assert np.array_equal(nb.transition_fill(idx, k, counted), npk.transition_fill(idx, k, counted))


def test_token_bias_gather_parity():
    r = np.random.default_rng(0)
    for _ in range(30):
        k = int(r.integers(1, 6))
        amp = r.normal(size=(k, k))
        tok = r.integers(-1, k, size=int(r.integers(1, 15)))
        assert np.array_equal(nb.token_bias_gather(amp, tok), npk.token_bias_gather(amp, tok))


def test_gaze_walk_parity():
    r = np.random.default_rng(0)
    for _ in range(100):
        n_vis, n_txt = int(r.integers(1, 6)), int(r.integers(0, 5))
        partner = np.full(n_vis + n_txt + 1, -1, dtype=np.int64)
        if n_txt:
            partner[0] = n_vis
            partner[n_vis] = 0
        u = r.random((int(r.integers(1, 60)), 3))
        args = (n_vis, n_txt, partner, r.random() * 0.3, r.random() * 0.5, r.random())
        a, b = nb.gaze_walk(u, *args), npk.gaze_walk(u, *args)
        assert np.array_equal(a, b)
        assert a.min() >= 0 and a.max() <= n_vis + n_txt
        assert a[0] < n_vis


def test_confusion_parity():
    r = np.random.default_rng(0)
    gold, pred = r.integers(0, 3, 200), r.integers(-1, 3, 200)
    m = nb.confusion_counts(gold, pred, 3)
    assert np.array_equal(m, npk.confusion_counts(gold, pred, 3))
    assert m.sum() == (pred >= 0).sum()
