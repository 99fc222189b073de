import math

import numpy as np
import pytest

from pcekit.numerics import (
    AdamW,
    LSTM,
    MultiHeadAttention,
    NonFiniteError,
    ShapeError,
    Tensor,
    cross_entropy,
    gradcheck,
    load_checkpoint,
    lstm_cell,
    no_grad,
    relative_error,
    save_checkpoint,
)
from pcekit.numerics import tensor as T
from pcekit.numerics.layers import Linear, PackPlan

from gradops import OPS

SEEDS = range(20)


@pytest.mark.parametrize("op", sorted(OPS))
def test_gradcheck(op):
    worst = 0.0
    for seed in SEEDS:
        loss, leaves = OPS[op](np.random.default_rng(seed))
        worst = max(worst, gradcheck(loss, leaves))
    assert worst < 1e-4, f"{op}: max relative error {worst:.3g}"


def test_relative_error_floor():
    assert relative_error([0.0], [1e-9]) == pytest.approx(1e-4)
    assert relative_error([2.0], [2.0 + 2e-6]) == pytest.approx(1e-6, rel=1e-3)


def test_graph_is_consumed():
    a = Tensor(np.ones(3), requires_grad=True)
    out = T.sum_(a * a)
    out.backward()
    np.testing.assert_array_equal(a.grad, 2 * np.ones(3))
    with pytest.raises(RuntimeError):
        out.backward()


def test_grad_accumulates_across_backward_calls():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.sum_(a * 3.0).backward()
    T.sum_(a * 3.0).backward()
    np.testing.assert_array_equal(a.grad, [6.0, 6.0])


def test_no_grad_builds_no_graph():
    a = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        out = a * 2
    assert not out.requires_grad
    with pytest.raises(RuntimeError):
        out.backward()


def test_nonfinite_and_shape_errors():
    a = Tensor(np.array([1e308]), requires_grad=True)
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        a * 1e10
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeError):
        (Tensor(np.ones(2), requires_grad=True) * 1).backward()
    with pytest.raises(IndexError):
        T.embedding_lookup(Tensor(np.ones((2, 2))), [2])


def test_cross_entropy_value():
    x = Tensor(np.log(np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])), requires_grad=True)
    loss = cross_entropy(x, [0, 2])
    assert loss.item() == pytest.approx(-(math.log(0.7) + math.log(0.8)) / 2)


def test_adamw_first_step_hand_example():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = np.array([1.0])
    opt.step()
    # bias-corrected m/sqrt(v) is exactly 1 on the first step
    assert p.data[0] == pytest.approx(0.9, abs=1e-8)


def test_adamw_decoupled_decay():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.1)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(1.0 - 0.1 - 0.1 * 0.1, abs=1e-8)
    # decay acts even with a zero gradient, and is not rescaled by the moments
    q = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([q], lr=0.5, weight_decay=0.2)
    q.grad = np.zeros(1)
    opt.step()
    assert q.data[0] == pytest.approx(2.0 - 0.5 * 0.2 * 2.0)


def test_adamw_second_step():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = AdamW([p], lr=0.01, weight_decay=0.0)
    for g in (1.0, -1.0):
        p.grad = np.array([g])
        opt.step()
    m = 0.9 * 0.1 * 1.0 + 0.1 * -1.0
    v = 0.999 * 0.001 + 0.001
    m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999 ** 2)
    first = -0.01 / (1.0 + 1e-8)
    assert p.data[0] == pytest.approx(first - 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8), rel=1e-9)


def test_adamw_rejects_nonfinite_grad():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    p.grad = np.array([np.nan])
    with pytest.raises(NonFiniteError):
        opt.step()


def _attention_oracle(x, mha, bias):
    def lin(layer, v):
        return v @ layer.weight.data + layer.bias.data
    nh = mha.n_heads
    t, d = x.shape
    dh = d // nh
    q, k, v = lin(mha.q, x), lin(mha.k, x), lin(mha.v, x)
    ctx = np.zeros((t, d))
    for h in range(nh):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(t):
            scores = [q[i, sl] @ k[j, sl] / math.sqrt(dh) + bias[i, j] for j in range(t)]
            w = np.exp(np.array(scores) - max(scores))
            w /= w.sum()
            ctx[i, sl] = sum(w[j] * v[j, sl] for j in range(t))
    return lin(mha.o, ctx)


def test_attention_hand_oracle():
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(6, 3, rng)
    x = rng.normal(size=(4, 6))
    bias = rng.normal(size=(4, 4)) * 2
    out = mha(Tensor(x), bias)
    np.testing.assert_allclose(out.data, _attention_oracle(x, mha, bias), rtol=1e-10, atol=1e-12)


def test_attention_bias_steers_weights():
    rng = np.random.default_rng(1)
    mha = MultiHeadAttention(4, 2, rng)
    mha.record = True
    bias = np.zeros((3, 3))
    bias[:, 2] = 50.0
    mha(Tensor(rng.normal(size=(3, 4))), bias)
    assert np.all(mha.last_attention[..., 2] > 0.999)
    bias[:, 2] = -1e9
    mha(Tensor(rng.normal(size=(3, 4))), bias)
    assert np.all(mha.last_attention[..., 2] < 1e-12)


def test_pack_plan():
    plan = PackPlan.from_lengths([2, 3, 1])
    assert plan.order.tolist() == [1, 0, 2]
    assert plan.batch_sizes.tolist() == [3, 2, 1]
    assert plan.offsets.tolist() == [0, 3, 5]


def test_packed_lstm_matches_cell_loop():
    rng = np.random.default_rng(2)
    layer = LSTM(3, 5, rng)
    lengths = np.array([4, 1, 6, 4])
    x = rng.normal(size=(4, 6, 3))
    out = layer(Tensor(x), lengths).data
    for r, n in enumerate(lengths):
        h = c = Tensor(np.zeros((1, 5)))
        for t in range(n):
            h, c = lstm_cell(Tensor(x[r:r + 1, t]), h, c, layer.w_x, layer.w_h, layer.b)
        np.testing.assert_allclose(out[r], h.data[0], rtol=1e-12, atol=1e-14)
    # padding content never leaks into the result
    x2 = x.copy()
    x2[1, 1:] = 99.0
    np.testing.assert_array_equal(layer(Tensor(x2), lengths).data, out)


def test_lstm_rejects_empty_rows():
    layer = LSTM(2, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer(Tensor(np.zeros((2, 3, 2))), [3, 0])


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    lin = Linear(3, 2, rng)
    js, bn = save_checkpoint(lin.state_dict(), tmp_path / "ck", {"note": "x"})
    state, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["meta"]["note"] == "x"
    other = Linear(3, 2, np.random.default_rng(9))
    other.load_state_dict(state)
    for a, b in zip(lin.parameters(), other.parameters()):
        assert np.array_equal(a.data, b.data)
    with pytest.raises(KeyError):
        other.load_state_dict({"weight": state["weight"]})


def test_no_grad_is_per_thread():
    import threading
    from pcekit.numerics.tensor import grad_enabled
    inside, release = threading.Event(), threading.Event()
    seen = []

    def worker():
        with no_grad():
            inside.set()
            release.wait(5)
        seen.append(grad_enabled())

    t = threading.Thread(target=worker)
    t.start()
    inside.wait(5)
    assert grad_enabled()  # the other thread's no_grad does not leak here
    with no_grad():
        release.set()
        t.join()
    assert grad_enabled() and seen == [True]
