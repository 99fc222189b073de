"""numba-compiled kernels; same names and signatures as ``_numpy``."""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def softmax_rows(z):
    n, k = z.shape
    out = np.empty_like(z)
    for r in range(n):
        m = z[r, 0]
        for j in range(1, k):
            if z[r, j] > m:
                m = z[r, j]
        s = 0.0
        for j in range(k):
            e = math.exp(z[r, j] - m)
            out[r, j] = e
            s += e
        inv = 1.0 / s
        for j in range(k):
            out[r, j] *= inv
    return out


@njit(cache=True)
def softmax_rows_backward(p, g):
    n, k = p.shape
    out = np.empty_like(p)
    for r in range(n):
        dot = 0.0
        for j in range(k):
            dot += g[r, j] * p[r, j]
        for j in range(k):
            out[r, j] = p[r, j] * (g[r, j] - dot)
    return out


@njit(cache=True)
def layer_norm(x, gamma, beta, eps):
    n, k = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n)
    for r in range(n):
        mu = 0.0
        for j in range(k):
            mu += x[r, j]
        mu /= k
        var = 0.0
        for j in range(k):
            d = x[r, j] - mu
            var += d * d
        var /= k
        rs = 1.0 / math.sqrt(var + eps)
        rstd[r] = rs
        for j in range(k):
            xh = (x[r, j] - mu) * rs
            xhat[r, j] = xh
            y[r, j] = xh * gamma[j] + beta[j]
    return y, xhat, rstd


@njit(cache=True)
def layer_norm_backward(g, xhat, rstd, gamma):
    n, k = g.shape
    dx = np.empty_like(g)
    dgamma = np.zeros(k)
    dbeta = np.zeros(k)
    for r in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(k):
            gx = g[r, j] * gamma[j]
            m1 += gx
            m2 += gx * xhat[r, j]
            dgamma[j] += g[r, j] * xhat[r, j]
            dbeta[j] += g[r, j]
        m1 /= k
        m2 /= k
        for j in range(k):
            dx[r, j] = rstd[r] * (g[r, j] * gamma[j] - m1 - xhat[r, j] * m2)
    return dx, dgamma, dbeta


# exp-based forms: scalar libm tanh is several times slower than exp here
@njit(cache=True)
def _sigmoid(a):
    return 1.0 / (1.0 + math.exp(-a))


@njit(cache=True)
def _tanh(a):
    return 2.0 / (1.0 + math.exp(-2.0 * a)) - 1.0


@njit(cache=True)
def lstm_pointwise(gates, c_prev):
    b, hd = c_prev.shape
    h = np.empty((b, hd))
    c = np.empty((b, hd))
    cache = np.empty((5, b, hd))
    for r in range(b):
        for j in range(hd):
            i = _sigmoid(gates[r, j])
            f = _sigmoid(gates[r, hd + j])
            g = _tanh(gates[r, 2 * hd + j])
            o = _sigmoid(gates[r, 3 * hd + j])
            cc = f * c_prev[r, j] + i * g
            tc = _tanh(cc)
            c[r, j] = cc
            h[r, j] = o * tc
            cache[0, r, j] = i
            cache[1, r, j] = f
            cache[2, r, j] = g
            cache[3, r, j] = o
            cache[4, r, j] = tc
    return h, c, cache


@njit(cache=True)
def lstm_pointwise_backward(dh, dc, cache, c_prev):
    b, hd = c_prev.shape
    dgates = np.empty((b, 4 * hd))
    dc_prev = np.empty((b, hd))
    for r in range(b):
        for j in range(hd):
            i = cache[0, r, j]
            f = cache[1, r, j]
            g = cache[2, r, j]
            o = cache[3, r, j]
            tc = cache[4, r, j]
            dct = dc[r, j] + dh[r, j] * o * (1.0 - tc * tc)
            dgates[r, j] = dct * g * i * (1.0 - i)
            dgates[r, hd + j] = dct * c_prev[r, j] * f * (1.0 - f)
            dgates[r, 2 * hd + j] = dct * i * (1.0 - g * g)
            dgates[r, 3 * hd + j] = dh[r, j] * tc * o * (1.0 - o)
            dc_prev[r, j] = dct * f
    return dgates, dc_prev


@njit(cache=True)
def transition_fill(local_idx, k, counted):
    m = np.zeros((k, k), dtype=np.int64)
    for t in range(local_idx.shape[0] - 1):
        a = local_idx[t]
        b = local_idx[t + 1]
        if counted:
            m[a, b] += 1
        else:
            m[a, b] = 1
    return m


@njit(cache=True)
def token_bias_gather(amplified, tok):
    n = tok.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        a = tok[i]
        if a < 0:
            continue
        for j in range(n):
            b = tok[j]
            if b >= 0:
                out[i, j] = amplified[a, b]
    return out


@njit(cache=True)
def gaze_walk(u, n_vis, n_txt, partner, p_off, p_cross, p_match):
    length = u.shape[0]
    off = n_vis + n_txt
    n_on = n_vis + n_txt
    seq = np.empty(length, dtype=np.int64)
    seq[0] = min(int(u[0, 1] * n_vis), n_vis - 1)
    for t in range(1, length):
        cur = seq[t - 1]
        if cur == off:
            seq[t] = min(int(u[t, 1] * n_on), n_on - 1)
            continue
        if cur < n_vis:
            lo, n_same, olo, n_opp = 0, n_vis, n_vis, n_txt
        else:
            lo, n_same, olo, n_opp = n_vis, n_txt, 0, n_vis
        r = u[t, 0]
        if r < p_off:
            seq[t] = off
        elif r < p_off + p_cross and n_opp > 0:
            if partner[cur] >= 0 and u[t, 2] < p_match:
                seq[t] = partner[cur]
            else:
                seq[t] = olo + min(int(u[t, 1] * n_opp), n_opp - 1)
        elif n_same > 1:
            j = lo + min(int(u[t, 1] * (n_same - 1)), n_same - 2)
            seq[t] = j + 1 if j >= cur else j
        else:
            seq[t] = cur
    return seq


@njit(cache=True)
def confusion_counts(gold, pred, k):
    m = np.zeros((k, k), dtype=np.int64)
    for t in range(gold.shape[0]):
        if pred[t] >= 0:
            m[gold[t], pred[t]] += 1
    return m
