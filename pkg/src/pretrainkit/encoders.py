"""Sequence encoders: LSTM, GRU, CNN, GatedCNN, AttentionNN, Transformer, stacking.

Every encoder maps (B, T, H_in) hidden states to (B, T, H_out) under a pad
mask. Attention-style encoders mask pad keys additively; recurrent and
convolutional encoders rely on the stack zeroing pad positions between
encoders, which makes trailing padding invisible to real positions.
"""

import math

import numpy as np

from .errors import SpecError
from .layers import GRUCell
from .modules import LayerNorm, Linear, Module
from .tensor import (Tensor, add, concat, dropout, gelu, matmul, mul, narrow,
                     pad_time, reshape, scale, sigmoid, softmax, stack_time,
                     tanh, transpose, flip_padded)

NEG_INF = -1e9


def attention_mask(pad_mask, causal):
    """Additive (B, 1, T, T) mask: pad keys and, if causal, future keys -> -1e9."""
    b, t = pad_mask.shape
    key = np.where(pad_mask[:, None, :], 0.0, NEG_INF)  # (B, 1, T)
    mask = np.broadcast_to(key[:, None, :, :], (b, 1, t, t)).copy()
    if causal:
        future = np.triu(np.full((t, t), NEG_INF), k=1)
        mask = mask + future[None, None]
    return mask


class LSTMCell(Module):
    """Gates packed i|f|g|o along the last axis."""

    def __init__(self, d_in, d_h, init):
        self.wx = init.normal(d_in, 4 * d_h)
        self.wh = init.normal(d_h, 4 * d_h)
        self.b = init.zeros(4 * d_h)
        self.d_h = d_h

    def step(self, x, h, c):
        gates = add(add(x @ self.wx, h @ self.wh), self.b)
        d = self.d_h
        i = sigmoid(narrow(gates, 1, 0, d))
        f = sigmoid(narrow(gates, 1, d, d))
        g = tanh(narrow(gates, 1, 2 * d, d))
        o = sigmoid(narrow(gates, 1, 3 * d, d))
        c_new = add(mul(f, c), mul(i, g))
        h_new = mul(o, tanh(c_new))
        return h_new, c_new


class RecurrentEncoder(Module):
    """Unidirectional (default) LSTM/GRU stack; optional bidirectional variant
    concatenates a reversed-direction pass and projects back to H."""

    def __init__(self, cfg, d_in, init):
        self.kind = cfg.kind
        self.width = cfg.hidden
        self.bidirectional = cfg.bidirectional_rnn
        cell_cls = LSTMCell if cfg.kind == "lstm" else GRUCell
        self.layer = [
            cell_cls(d_in if i == 0 else cfg.hidden, cfg.hidden, init)
            for i in range(cfg.layers)
        ]
        if self.bidirectional:
            self.layer_rev = [
                cell_cls(d_in if i == 0 else cfg.hidden, cfg.hidden, init)
                for i in range(cfg.layers)
            ]
            self.proj = Linear(2 * cfg.hidden, cfg.hidden, init)

    def _run(self, cells, x):
        b, t, _ = x.data.shape
        for cell in cells:
            h = Tensor(np.zeros((b, self.width)))
            c = Tensor(np.zeros((b, self.width)))
            outs = []
            for step in range(t):
                x_t = reshape(narrow(x, 1, step, 1), (b, -1))
                if self.kind == "lstm":
                    h, c = cell.step(x_t, h, c)
                else:
                    h = cell.step(x_t, h)
                outs.append(h)
            x = stack_time(outs)
        return x

    def __call__(self, x, pad_mask, train=False, rng=None):
        fwd = self._run(self.layer, x)
        if not self.bidirectional:
            return fwd
        lengths = pad_mask.sum(axis=1)
        rev_in = flip_padded(x, lengths)
        rev = flip_padded(self._run(self.layer_rev, rev_in), lengths)
        return self.proj(concat([fwd, rev], axis=-1))


class ConvEncoder(Module):
    """1-d convolution over time; the gated variant multiplies by a
    sigmoid-gated parallel convolution (GLU). Causal mode left-pads by
    kernel-1 so position t never sees the future."""

    def __init__(self, cfg, d_in, init, gated=False):
        self.kind = cfg.kind
        self.width = cfg.hidden
        self.kernel = cfg.kernel
        self.causal = cfg.mask == "causal"
        self.gated = gated
        self.layer = []
        for i in range(cfg.layers):
            w_in = d_in if i == 0 else cfg.hidden
            entry = _ConvLayer(w_in, cfg.hidden, cfg.kernel, init, gated)
            self.layer.append(entry)

    def __call__(self, x, pad_mask, train=False, rng=None):
        for layer in self.layer:
            x = layer(x, self.causal)
        return x


class _ConvLayer(Module):
    def __init__(self, d_in, d_out, kernel, init, gated):
        self.w = init.normal(kernel, d_in, d_out)
        self.b = init.zeros(d_out)
        self.gated = gated
        if gated:
            self.gate_w = init.normal(kernel, d_in, d_out)
            self.gate_b = init.zeros(d_out)
        self._kernel = kernel
        self._d_in = d_in
        self._d_out = d_out

    def _conv(self, x, w, b, causal):
        _, t, _ = x.data.shape
        k = self._kernel
        left, right = (k - 1, 0) if causal else ((k - 1) // 2, (k - 1) // 2)
        xp = pad_time(x, left, right)
        acc = None
        for j in range(k):
            w_j = reshape(narrow(w, 0, j, 1), (self._d_in, self._d_out))
            term = narrow(xp, 1, j, t) @ w_j
            acc = term if acc is None else add(acc, term)
        return add(acc, b)

    def __call__(self, x, causal):
        y = self._conv(x, self.w, self.b, causal)
        if self.gated:
            gate = sigmoid(self._conv(x, self.gate_w, self.gate_b, causal))
            y = mul(y, gate)
        return y


class AttnEncoder(Module):
    """Single-head scaled dot-product attention layers, no feed-forward block."""

    def __init__(self, cfg, d_in, init):
        self.width = cfg.hidden
        self.causal = cfg.mask == "causal"
        self.layer = [_AttnLayer(d_in if i == 0 else cfg.hidden, cfg.hidden, init)
                      for i in range(cfg.layers)]

    def __call__(self, x, pad_mask, train=False, rng=None):
        mask = attention_mask(pad_mask, self.causal)[:, 0]  # (B, T, T)
        for layer in self.layer:
            x = layer(x, mask)
        return x


class _AttnLayer(Module):
    def __init__(self, d_in, d_out, init):
        self.q = Linear(d_in, d_out, init)
        self.k = Linear(d_in, d_out, init)
        self.v = Linear(d_in, d_out, init)
        self._scale = 1.0 / math.sqrt(d_out)

    def __call__(self, x, mask):
        q, k, v = self.q(x), self.k(x), self.v(x)
        scores = add(scale(matmul(q, transpose(k, (0, 2, 1))), self._scale), mask)
        return matmul(softmax(scores, axis=-1), v)


class TransformerEncoder(Module):
    """Post-norm transformer: self-attention + residual + LN, then GELU FFN
    + residual + LN, per layer."""

    def __init__(self, cfg, d_in, init, drop_rate=0.1):
        if d_in != cfg.hidden:
            raise SpecError(
                f"transformer input width {d_in} != hidden {cfg.hidden}"
            )
        self.width = cfg.hidden
        self.causal = cfg.mask == "causal"
        self.layer = [
            TransformerBlock(cfg.hidden, cfg.heads, cfg.ffn, init)
            for _ in range(cfg.layers)
        ]
        self._drop = drop_rate

    def __call__(self, x, pad_mask, train=False, rng=None):
        mask = attention_mask(pad_mask, self.causal)
        for block in self.layer:
            x = block(x, mask, self._drop, train, rng)
        return x


class TransformerBlock(Module):
    def __init__(self, width, heads, ffn, init):
        self.attn = MultiHeadAttention(width, heads, init)
        self.ln1 = LayerNorm(width, init)
        self.w1 = Linear(width, ffn, init)
        self.w2 = Linear(ffn, width, init)
        self.ln2 = LayerNorm(width, init)

    def __call__(self, x, mask, drop_rate, train, rng):
        a = self.attn(x, mask)
        a = dropout(a, drop_rate, rng, train)
        x = self.ln1(add(x, a))
        f = self.w2(gelu(self.w1(x)))
        f = dropout(f, drop_rate, rng, train)
        return self.ln2(add(x, f))


class MultiHeadAttention(Module):
    def __init__(self, width, heads, init):
        self.q = Linear(width, width, init)
        self.k = Linear(width, width, init)
        self.v = Linear(width, width, init)
        self.o = Linear(width, width, init)
        self._heads = heads
        self._d = width // heads

    def __call__(self, x, mask):
        b, t, h = x.data.shape
        n, d = self._heads, self._d

        def split(z):  # (B, T, H) -> (B, heads, T, d)
            return transpose(reshape(z, (b, t, n, d)), (0, 2, 1, 3))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
        attn = softmax(add(scores, mask), axis=-1)
        ctx = matmul(attn, v)  # (B, heads, T, d)
        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, h))
        return self.o(merged)


class WidthAdapter(Module):
    """Linear map gluing two stacked encoders of different widths."""

    def __init__(self, inner, d_in, d_inner, init):
        self.proj = Linear(d_in, d_inner, init)
        self.inner = inner
        self.width = inner.width

    def __call__(self, x, pad_mask, train=False, rng=None):
        return self.inner(self.proj(x), pad_mask, train=train, rng=rng)


def build_encoder(cfg, d_in, init, drop_rate=0.1):
    """Construct one encoder of cfg.kind reading width d_in."""
    if cfg.kind == "lstm" or cfg.kind == "gru":
        return RecurrentEncoder(cfg, d_in, init)
    if cfg.kind == "cnn":
        return ConvEncoder(cfg, d_in, init, gated=False)
    if cfg.kind == "gatedcnn":
        return ConvEncoder(cfg, d_in, init, gated=True)
    if cfg.kind == "attnn":
        return AttnEncoder(cfg, d_in, init)
    if cfg.kind == "transformer":
        return TransformerEncoder(cfg, d_in, init, drop_rate=drop_rate)
    raise SpecError(f"unknown encoder kind {cfg.kind!r}")


def run_stack(encoders, x, pad_mask, train=False, rng=None):
    """Compose encoders in order, zeroing pad positions before each one."""
    keep = pad_mask.astype(np.float64)[:, :, None]
    for enc in encoders:
        x = mul(x, keep)
        x = enc(x, pad_mask, train=train, rng=rng)
    return x
