"""Pure-numpy reference versions of the hot kernels.

Every function here has a twin with the same name and signature in
``_numba``.  Array arguments are expected to be C-contiguous float64 (or
int64 for index arrays); the dispatcher in ``pcekit.kernels`` takes care
of that.
"""
import numpy as np


def softmax_rows(z):
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(p, g):
    return p * (g - (g * p).sum(axis=1, keepdims=True))


def layer_norm(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layer_norm_backward(g, xhat, rstd, gamma):
    gx = g * gamma
    dx = rstd[:, None] * (
        gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True)
    )
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def lstm_pointwise(gates, c_prev):
    hd = c_prev.shape[1]
    i = _sigmoid(gates[:, :hd])
    f = _sigmoid(gates[:, hd:2 * hd])
    g = np.tanh(gates[:, 2 * hd:3 * hd])
    o = _sigmoid(gates[:, 3 * hd:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, np.stack([i, f, g, o, tc])


def lstm_pointwise_backward(dh, dc, cache, c_prev):
    i, f, g, o, tc = cache
    dct = dc + dh * o * (1.0 - tc * tc)
    dgates = np.concatenate(
        [
            dct * g * i * (1.0 - i),
            dct * c_prev * f * (1.0 - f),
            dct * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ],
        axis=1,
    )
    return dgates, dct * f


def transition_fill(local_idx, k, counted):
    m = np.zeros((k, k), dtype=np.int64)
    if local_idx.shape[0] < 2:
        return m
    src, dst = local_idx[:-1], local_idx[1:]
    if counted:
        np.add.at(m, (src, dst), 1)
    else:
        m[src, dst] = 1
    return m


def token_bias_gather(amplified, tok):
    n = tok.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    mapped = np.flatnonzero(tok >= 0)
    if mapped.size:
        sel = tok[mapped]
        out[np.ix_(mapped, mapped)] = amplified[np.ix_(sel, sel)]
    return out


def gaze_walk(u, n_vis, n_txt, partner, p_off, p_cross, p_match):
    # Python loop on purpose: this is the readable definition the numba
    # kernel must reproduce exactly (same draws, same comparisons).
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


def confusion_counts(gold, pred, k):
    m = np.zeros((k, k), dtype=np.int64)
    ok = pred >= 0
    np.add.at(m, (gold[ok], pred[ok]), 1)
    return m
