"""Gradient-check cases, one per differentiable op.

Each builder takes an rng and returns ``(loss_fn, leaves)``.  Outputs are
contracted with a fixed random weight so every output entry matters.
"""
import numpy as np

from pcekit.numerics import tensor as T
from pcekit.numerics.layers import LSTM, EncoderLayer, MultiHeadAttention, PackPlan


def _leaf(rng, *shape, scale=1.0):
    return T.Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _contract(rng, shape):
    w = rng.normal(size=shape)
    return lambda out: T.sum_(T.mul(out, w))


def _unary(fn, shape=(3, 4)):
    def build(rng):
        a = _leaf(rng, *shape)
        c = _contract(rng, shape)
        return (lambda: c(fn(a))), [a]
    return build


def _add_broadcast(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    c = _contract(rng, (3, 4))
    return (lambda: c(a + b)), [a, b]


def _mul_broadcast(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 3, 1)
    c = _contract(rng, (2, 3, 4))
    return (lambda: c(a * b)), [a, b]


def _sub(rng):
    a, b = _leaf(rng, 3, 2), _leaf(rng, 3, 2)
    c = _contract(rng, (3, 2))
    return (lambda: c(a - b)), [a, b]


def _matmul_2d(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5)
    c = _contract(rng, (3, 5))
    return (lambda: c(a @ b)), [a, b]


def _matmul_batched(rng):
    a, b = _leaf(rng, 2, 3, 3, 4), _leaf(rng, 2, 3, 4, 2)
    c = _contract(rng, (2, 3, 3, 2))
    return (lambda: c(a @ b)), [a, b]


def _matmul_fold(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    c = _contract(rng, (2, 3, 5))
    return (lambda: c(a @ b)), [a, b]


def _reshape(rng):
    a = _leaf(rng, 2, 6)
    c = _contract(rng, (3, 4))
    return (lambda: c(a.reshape(3, 4))), [a]


def _transpose(rng):
    a = _leaf(rng, 2, 3, 4)
    c = _contract(rng, (4, 2, 3))
    return (lambda: c(a.transpose(2, 0, 1))), [a]


def _swapaxes(rng):
    a = _leaf(rng, 2, 3, 4)
    c = _contract(rng, (2, 4, 3))
    return (lambda: c(T.swapaxes(a, -1, -2))), [a]


def _slice_basic(rng):
    a = _leaf(rng, 5, 4)
    c = _contract(rng, (2, 4))
    return (lambda: c(a[1:3])), [a]


def _slice_fancy(rng):
    a = _leaf(rng, 5, 4)
    idx = np.array([0, 2, 2, 4])
    c = _contract(rng, (4, 4))
    return (lambda: c(a[idx])), [a]


def _slice_reuse(rng):
    # overlapping reads of the same parent exercise sparse accumulation
    a = _leaf(rng, 4, 3)
    c1, c2 = _contract(rng, (3,)), _contract(rng, (2, 3))
    return (lambda: c1(a[1]) + c2(a[0:2]) + T.sum_(a * a)), [a]


def _concat(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 4, 3)
    c = _contract(rng, (6, 3))
    return (lambda: c(T.concat([a, b], axis=0))), [a, b]


def _stack(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
    c = _contract(rng, (2, 2, 3))
    return (lambda: c(T.stack([a, b], axis=1))), [a, b]


def _embedding(rng):
    table = _leaf(rng, 5, 3)
    idx = np.array([[0, 4], [4, 1]])
    c = _contract(rng, (2, 2, 3))
    return (lambda: c(T.embedding_lookup(table, idx))), [table]


def _sum_axis(rng):
    a = _leaf(rng, 3, 4)
    c = _contract(rng, (4,))
    return (lambda: c(a.sum(axis=0))), [a]


def _mean_axis(rng):
    a = _leaf(rng, 3, 4)
    c = _contract(rng, (3, 1))
    return (lambda: c(a.mean(axis=1, keepdims=True))), [a]


def _layer_norm(rng):
    x, g, b = _leaf(rng, 3, 5), _leaf(rng, 5), _leaf(rng, 5)
    c = _contract(rng, (3, 5))
    return (lambda: c(T.layer_norm(x, g, b))), [x, g, b]


def _softmax(rng):
    x = _leaf(rng, 3, 5)
    c = _contract(rng, (3, 5))
    return (lambda: c(T.softmax_rows(x))), [x]


def _softmax_bias(rng):
    x, bias = _leaf(rng, 2, 4, 4), _leaf(rng, 4, 4)
    c = _contract(rng, (2, 4, 4))
    return (lambda: c(T.softmax_rows(x, bias))), [x, bias]


def _cross_entropy(rng):
    x = _leaf(rng, 4, 3)
    t = rng.integers(0, 3, 4)
    return (lambda: T.cross_entropy(x, t)), [x]


def _cross_entropy_probs(rng):
    x = _leaf(rng, 4, 3)
    t = rng.integers(0, 3, 4)
    return (lambda: T.cross_entropy(T.softmax_rows(x), t, from_probs=True)), [x]


def _lstm_cell(rng):
    x, h, cst = _leaf(rng, 2, 3), _leaf(rng, 2, 4), _leaf(rng, 2, 4)
    wx, wh, b = _leaf(rng, 3, 16, scale=0.5), _leaf(rng, 4, 16, scale=0.5), _leaf(rng, 16)
    c1, c2 = _contract(rng, (2, 4)), _contract(rng, (2, 4))

    def loss():
        hn, cn = T.lstm_cell(x, h, cst, wx, wh, b)
        return c1(hn) + c2(cn)
    return loss, [x, h, cst, wx, wh, b]


def _lstm_packed(rng):
    layer = LSTM(3, 4, rng)
    lengths = np.array([2, 5, 1, 5])
    x = _leaf(rng, 4, 5, 3)
    c = _contract(rng, (4, 4))
    return (lambda: c(layer(x, lengths))), [x, *layer.parameters()]


def _attention(rng):
    mha = MultiHeadAttention(4, 2, rng)
    x = _leaf(rng, 2, 3, 4)
    bias = rng.normal(size=(2, 3, 3))
    c = _contract(rng, (2, 3, 4))
    return (lambda: c(mha(x, bias))), [x, *mha.parameters()]


def _encoder_layer(rng):
    layer = EncoderLayer(4, 2, 6, rng)
    x = _leaf(rng, 2, 3, 4)
    bias = rng.normal(size=(3, 3))
    c = _contract(rng, (2, 3, 4))
    return (lambda: c(layer(x, bias))), [x, *layer.parameters()]


OPS = {
    "add": _add_broadcast,
    "sub": _sub,
    "mul": _mul_broadcast,
    "neg": _unary(T.neg),
    "scaled": _unary(lambda a: T.scaled(a, 0.37)),
    "sigmoid": _unary(T.sigmoid),
    "tanh": _unary(T.tanh),
    "relu": _unary(T.relu),
    "matmul_2d": _matmul_2d,
    "matmul_batched": _matmul_batched,
    "matmul_fold": _matmul_fold,
    "reshape": _reshape,
    "transpose": _transpose,
    "swapaxes": _swapaxes,
    "slice_basic": _slice_basic,
    "slice_fancy": _slice_fancy,
    "slice_reuse": _slice_reuse,
    "concat": _concat,
    "stack": _stack,
    "embedding": _embedding,
    "sum": _sum_axis,
    "mean": _mean_axis,
    "layer_norm": _layer_norm,
    "softmax": _softmax,
    "softmax_bias": _softmax_bias,
    "cross_entropy": _cross_entropy,
    "cross_entropy_probs": _cross_entropy_probs,
    "lstm_cell": _lstm_cell,
    "lstm_packed": _lstm_packed,
    "attention": _attention,
    "encoder_layer": _encoder_layer,
}
