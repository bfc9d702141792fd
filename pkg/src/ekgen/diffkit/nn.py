"""Trainable layers built on the tensor engine: LSTM, attention, transformer."""

from __future__ import annotations

import numpy as np

from .tensor import (Tensor, as_tensor, concat, stack, softmax, log_softmax,
                     layer_norm, parameter, zeros)


class Module:
    """Base for layers; parameters() flattens the nested name->Tensor map."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                for k, v in val.parameters().items():
                    out[f"{name}.{k}"] = v
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        for k, v in item.parameters().items():
                            out[f"{name}.{i}.{k}"] = v
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def load_state(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) ^ set(state)
        if missing:
            raise KeyError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
        for name, p in params.items():
            p.data = np.asarray(state[name], dtype=p.data.dtype).reshape(p.data.shape)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.parameters().items()}


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.w = parameter(rng, d_in, d_out)
        self.b = zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = as_tensor(x) @ self.w
        return y + self.b if self.b is not None else y


class LSTMCell(Module):
    """Standard LSTM cell; gate order i, f, g, o."""

    def __init__(self, rng, d_in: int, d_hidden: int):
        self.d_hidden = d_hidden
        self.w_ih = parameter(rng, d_in, 4 * d_hidden)
        self.w_hh = parameter(rng, d_hidden, 4 * d_hidden)
        self.b = zeros(4 * d_hidden)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        z = x @ self.w_ih + h @ self.w_hh + self.b
        n = self.d_hidden
        i = z[0:n].sigmoid() if z.ndim == 1 else z[:, 0:n].sigmoid()
        if z.ndim == 1:
            f = z[n:2 * n].sigmoid()
            g = z[2 * n:3 * n].tanh()
            o = z[3 * n:4 * n].sigmoid()
        else:
            f = z[:, n:2 * n].sigmoid()
            g = z[:, 2 * n:3 * n].tanh()
            o = z[:, 3 * n:4 * n].sigmoid()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next


def lstm_cell(x, h, c, cell: LSTMCell):
    return cell(x, h, c)


class BiLSTM(Module):
    """Stacked bidirectional LSTM over a (T, d_in) sequence.

    Output at step t is concat(forward h_t, backward h_t), so the feature
    width is 2 * d_hidden.
    """

    def __init__(self, rng, d_in: int, d_hidden: int, n_layers: int = 2):
        self.n_layers = n_layers
        self.d_hidden = d_hidden
        self.fwd = []
        self.bwd = []
        d = d_in
        for _ in range(n_layers):
            self.fwd.append(LSTMCell(rng, d, d_hidden))
            self.bwd.append(LSTMCell(rng, d, d_hidden))
            d = 2 * d_hidden

    def __call__(self, inputs: Tensor) -> Tensor:
        T = inputs.shape[0]
        if T == 0:
            raise ValueError("BiLSTM requires a non-empty sequence")
        steps = [inputs[t] for t in range(T)]
        for fcell, bcell in zip(self.fwd, self.bwd):
            h = Tensor(np.zeros(self.d_hidden))
            c = Tensor(np.zeros(self.d_hidden))
            fw = []
            for t in range(T):
                h, c = fcell(steps[t], h, c)
                fw.append(h)
            h = Tensor(np.zeros(self.d_hidden))
            c = Tensor(np.zeros(self.d_hidden))
            bw = [None] * T
            for t in reversed(range(T)):
                h, c = bcell(steps[t], h, c)
                bw[t] = h
            steps = [concat([fw[t], bw[t]], axis=-1) for t in range(T)]
        return stack(steps)


def bilstm_sequence(inputs: Tensor, lstm: BiLSTM) -> Tensor:
    return lstm(inputs)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                         mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with additive mask.

    q: (Lq, d), k/v: (Lk, d); mask broadcastable to (Lq, Lk), -inf where
    attention is forbidden. Heads split the model dim.
    """
    d = q.shape[-1]
    if d % n_heads:
        raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    outs = []
    for h in range(n_heads):
        qs = q[:, h * dh:(h + 1) * dh]
        ks = k[:, h * dh:(h + 1) * dh]
        vs = v[:, h * dh:(h + 1) * dh]
        scores = qs @ ks.T * (1.0 / np.sqrt(dh))
        if mask is not None:
            if mask.shape[-1] != k.shape[0]:
                raise ValueError(f"mask shape {mask.shape} vs keys {k.shape}")
            scores = scores + Tensor(mask)
        outs.append(softmax(scores, axis=-1) @ vs)
    return concat(outs, axis=-1)


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model: int, n_heads: int):
        self.n_heads = n_heads
        self.wq = Linear(rng, d_model, d_model)
        self.wk = Linear(rng, d_model, d_model)
        self.wv = Linear(rng, d_model, d_model)
        self.wo = Linear(rng, d_model, d_model)

    def __call__(self, q, k, v, mask=None):
        out = multi_head_attention(self.wq(q), self.wk(k), self.wv(v),
                                   self.n_heads, mask)
        return self.wo(out)


class FeedForward(Module):
    def __init__(self, rng, d_model: int, d_ff: int):
        self.l1 = Linear(rng, d_model, d_ff)
        self.l2 = Linear(rng, d_ff, d_model)

    def __call__(self, x):
        return self.l2(self.l1(x).gelu())


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = zeros(d)

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias)


class TransformerEncoderLayer(Module):
    def __init__(self, rng, d_model: int, n_heads: int, d_ff: int):
        self.attn = MultiHeadAttention(rng, d_model, n_heads)
        self.ff = FeedForward(rng, d_model, d_ff)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)

    def __call__(self, x, mask=None):
        x = self.ln1(x + self.attn(x, x, x, mask))
        return self.ln2(x + self.ff(x))


class TransformerDecoderLayer(Module):
    """Causal self-attention followed by cross-attention over the memory."""

    def __init__(self, rng, d_model: int, n_heads: int, d_ff: int):
        self.self_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.cross_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.ff = FeedForward(rng, d_model, d_ff)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)
        self.ln3 = LayerNorm(d_model)

    def __call__(self, x, memory, causal_mask, memory_mask=None):
        x = self.ln1(x + self.self_attn(x, x, x, causal_mask))
        x = self.ln2(x + self.cross_attn(x, memory, memory, memory_mask))
        return self.ln3(x + self.ff(x))


def causal_mask(n: int) -> np.ndarray:
    """Additive mask forbidding position i from attending to j > i."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -1e9
    return m


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angles = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out
