"""Parameter containers and the layers the models are built from."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    embedding_lookup,
    layer_norm,
    lstm_from_gates,
    matmul,
    relu,
    softmax_rows,
    swapaxes,
)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, name: str = "") -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class Module:
    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data[...] = arr


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (in_dim, out_dim), in_dim)
        self.bias = uniform_init(rng, (out_dim,), in_dim)

    def __call__(self, x):
        return add(matmul(x, self.weight), self.bias)


class Embedding(Module):
    # A one-hot input has a single active unit, so the effective fan-in is 1.
    def __init__(self, n: int, dim: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (n, dim), 1)

    def __call__(self, indices):
        return embedding_lookup(self.weight, indices)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


@dataclass(frozen=True)
class PackPlan:
    """Time-major packing of variable-length rows, longest first.

    Packed position ``offsets[t] + r`` holds step ``t`` of the ``r``-th
    longest row, i.e. original row ``order[r]``; ``batch_sizes[t]`` rows are
    still running at step ``t``.
    """

    order: np.ndarray
    batch_sizes: np.ndarray
    offsets: np.ndarray
    rows: np.ndarray
    steps: np.ndarray

    @classmethod
    def from_lengths(cls, lengths) -> "PackPlan":
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.ndim != 1 or lengths.size == 0 or lengths.min() < 1:
            raise ShapeError(f"packing: lengths must be a non-empty vector of positive ints, got {lengths}")
        order = np.argsort(-lengths, kind="stable")
        sorted_len = lengths[order]
        t_max = int(sorted_len[0])
        batch_sizes = np.array([(sorted_len > t).sum() for t in range(t_max)], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(batch_sizes)[:-1]])
        rows = np.concatenate([order[:n] for n in batch_sizes])
        steps = np.repeat(np.arange(t_max), batch_sizes)
        return cls(order, batch_sizes, offsets, rows, steps)


class LSTM(Module):
    """Single-layer unidirectional LSTM returning the hidden state at each sequence's end."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_x = uniform_init(rng, (in_dim, 4 * hidden), hidden)
        self.w_h = uniform_init(rng, (hidden, 4 * hidden), hidden)
        self.b = uniform_init(rng, (4 * hidden,), hidden)

    def __call__(self, x, lengths):
        """``x``: (B, T, in) tensor; ``lengths``: per-row valid lengths (>= 1)."""
        bsz, steps, _ = x.shape
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (bsz,) or lengths.min() < 1 or lengths.max() > steps:
            raise ShapeError(f"LSTM: lengths {lengths} inconsistent with input shape {x.shape}")
        plan = PackPlan.from_lengths(lengths)
        return self.forward_packed(x[plan.rows, plan.steps], plan)

    def forward_packed(self, xp, plan: PackPlan):
        """``xp``: (N, in) packed inputs laid out by ``plan``; returns (B, hidden) in original row order."""
        # input projection for all steps at once; the step loop only carries h @ w_h
        xg = add(matmul(xp, self.w_x), self.b)
        sizes = plan.batch_sizes
        n0 = int(sizes[0])
        h = Tensor(np.zeros((n0, self.hidden)))
        c = Tensor(np.zeros((n0, self.hidden)))
        finals, final_pos = [], []
        for t, n in enumerate(sizes):
            n = int(n)
            if h.shape[0] != n:
                h, c = h[:n], c[:n]
            off = int(plan.offsets[t])
            gates = add(xg[off:off + n], matmul(h, self.w_h))
            h, c = lstm_from_gates(gates, c)
            nxt = int(sizes[t + 1]) if t + 1 < len(sizes) else 0
            if nxt < n:
                finals.append(h if nxt == 0 else h[nxt:n])
                final_pos.append(np.arange(nxt, n))
        out = finals[0] if len(finals) == 1 else concat(finals, axis=0)
        pos = np.concatenate(final_pos)  # sorted rank held by each row of ``out``
        where = np.empty_like(pos)
        where[pos] = np.arange(pos.size)
        gather = np.empty_like(pos)
        gather[plan.order] = where
        if np.array_equal(gather, np.arange(gather.size)):
            return out
        return out[gather]


class MultiHeadAttention(Module):
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads:
            raise ValueError(f"model dim {dim} is not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)
        self.record = False
        self.last_attention = None

    def __call__(self, x, bias=None):
        """``x``: (B, T, d) or (T, d); ``bias``: additive logits, (T, T) or (B, T, T)."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        bsz, steps, dim = x.shape
        nh, dh = self.n_heads, dim // self.n_heads
        if bias is not None:
            bias = np.asarray(bias.data if isinstance(bias, Tensor) else bias, dtype=np.float64)
            if bias.shape[-2:] != (steps, steps) or bias.ndim not in (2, 3):
                raise ShapeError(f"attention: bias shape {bias.shape} does not match sequence length {steps}")
            if bias.ndim == 3:
                if bias.shape[0] != bsz:
                    raise ShapeError(f"attention: bias batch {bias.shape[0]} != input batch {bsz}")
                bias = bias[:, None, :, :]

        def heads(t):
            return t.reshape(bsz, steps, nh, dh).transpose(0, 2, 1, 3)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        logits = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        p = softmax_rows(logits, bias)
        if self.record:
            self.last_attention = p.data.copy()
        ctx = matmul(p, v).transpose(0, 2, 1, 3).reshape(bsz, steps, dim)
        out = self.o(ctx)
        return out.reshape(steps, dim) if squeeze else out


class EncoderLayer(Module):
    """Post-norm encoder block: attention, add & norm, ReLU feed-forward, add & norm."""

    def __init__(self, dim: int, n_heads: int, ff_dim: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_dim, rng)
        self.ff2 = Linear(ff_dim, dim, rng)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x, bias=None):
        x = self.norm1(x + self.attn(x, bias))
        return self.norm2(x + self.ff2(relu(self.ff1(x))))


class Encoder(Module):
    def __init__(self, n_layers: int, dim: int, n_heads: int, ff_dim: int, rng: np.random.Generator):
        self.layers = [EncoderLayer(dim, n_heads, ff_dim, rng) for _ in range(n_layers)]

    def __call__(self, x, biases):
        """``biases``: one additive attention bias per layer (or None)."""
        for layer, bias in zip(self.layers, biases):
            x = layer(x, bias)
        return x

    def record_attention(self, flag: bool = True):
        for layer in self.layers:
            layer.attn.record = flag
            layer.attn.last_attention = None
