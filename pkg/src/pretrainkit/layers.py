"""Token-to-vector layers: plain / BERT-style embeddings and the subword subencoder."""

import numpy as np

from .errors import DataError, ShapeError, SpecError
from .modules import LayerNorm, Linear, Module
from .tensor import (Tensor, add, concat, gather_rows, max_axis, mul, narrow,
                     pad_time, reshape, scale, sigmoid, stack_time, sum_axis,
                     tanh)
from .vocab import PAD


class PlainEmbedding(Module):
    """Word-table lookup only."""

    def __init__(self, vocab_size, width, init):
        self.word = init.normal(vocab_size, width)
        self.width = width

    def __call__(self, batch, train=False, rng=None):
        self._check_ids(batch.token_ids)
        return gather_rows(self.word, batch.token_ids, pad_id=PAD)

    def _check_ids(self, ids):
        v = self.word.data.shape[0]
        if ids.max() >= v:
            raise DataError(f"token id {int(ids.max())} >= vocabulary size {v}")


class BertEmbedding(Module):
    """word + position + segment lookups, summed and layer-normalized."""

    def __init__(self, vocab_size, width, max_len, init):
        self.word = init.normal(vocab_size, width)
        self.position = init.normal(max_len, width)
        self.segment = init.normal(2, width)
        self.norm = LayerNorm(width, init)
        self.width = width
        self.max_len = max_len

    def __call__(self, batch, train=False, rng=None):
        b, t = batch.token_ids.shape
        if t > self.max_len:
            raise DataError(
                f"sequence length {t} exceeds position table size {self.max_len}"
            )
        v = self.word.data.shape[0]
        if batch.token_ids.max() >= v:
            raise DataError(
                f"token id {int(batch.token_ids.max())} >= vocabulary size {v}"
            )
        words = gather_rows(self.word, batch.token_ids, pad_id=PAD)
        positions = gather_rows(
            self.position, np.broadcast_to(np.arange(t), (b, t))
        )
        segments = gather_rows(self.segment, batch.segment_ids)
        return self.norm(add(add(words, positions), segments))


class GRUCell(Module):
    """Gated recurrent cell: r/z gates then candidate state."""

    def __init__(self, d_in, d_h, init):
        self.wx_rz = init.normal(d_in, 2 * d_h)
        self.wh_rz = init.normal(d_h, 2 * d_h)
        self.b_rz = init.zeros(2 * d_h)
        self.wx_n = init.normal(d_in, d_h)
        self.wh_n = init.normal(d_h, d_h)
        self.b_n = init.zeros(d_h)
        self.d_h = d_h

    def step(self, x, h):
        rz = sigmoid(add(add(x @ self.wx_rz, h @ self.wh_rz), self.b_rz))
        r = narrow(rz, 1, 0, self.d_h)
        z = narrow(rz, 1, self.d_h, self.d_h)
        n = tanh(add(add(x @ self.wx_n, mul(r, h) @ self.wh_n), self.b_n))
        # h' = (1 - z) * n + z * h
        return add(mul(sub_one(z), n), mul(z, h))


def sub_one(z):
    return add(scale(z, -1.0), 1.0)


class Subencoder(Module):
    """Builds each word's vector from its subword units (chars by default).

    kind 'rnn' runs a GRU over the unit embeddings; kind 'cnn' applies a
    width-3 zero-padded convolution. Hidden states are then mean- or
    max-pooled into a fixed-length vector. CNN pooling is padding-corrected:
    when a token has at least `kernel` units, only positions whose window
    lies fully inside the true sequence are pooled.
    """

    KERNEL = 3

    def __init__(self, cfg, table, init, word_width=None):
        self.kind = cfg.kind
        self.pooling = cfg.pooling
        self.combine_mode = cfg.combine
        self.sub = init.normal(len(table), cfg.sub_width)
        self.width = cfg.hidden
        if cfg.kind == "rnn":
            self.cell = GRUCell(cfg.sub_width, cfg.hidden, init)
        elif cfg.kind == "cnn":
            self.conv = init.normal(self.KERNEL, cfg.sub_width, cfg.hidden)
            self.conv_b = init.zeros(cfg.hidden)
        else:
            raise SpecError(f"unknown subencoder kind {cfg.kind!r}")
        if cfg.combine == "concat-project":
            if word_width is None:
                raise SpecError("concat-project subencoder needs the word width")
            self.proj = Linear(word_width + cfg.hidden, word_width, init)
        else:
            self.proj = None
        self._table = table

    def decompose_batch(self, token_ids):
        """(B, T) token ids -> (N, S) unit ids + (N,) lengths, N = B*T."""
        flat = token_ids.reshape(-1)
        rows = [self._table.by_id[i] for i in flat]
        s = max(len(r) for r in rows)
        ids = np.zeros((len(rows), s), dtype=np.int64)
        lengths = np.empty(len(rows), dtype=np.int64)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = r
            lengths[i] = len(r)
        return ids, lengths

    def __call__(self, token_ids):
        """(B, T) int token ids -> (B, T, hidden) word vectors."""
        b, t = token_ids.shape
        ids, lengths = self.decompose_batch(token_ids)
        n, s = ids.shape
        emb = gather_rows(self.sub, ids, pad_id=0)  # (N, S, E)
        # beyond each token's true length the buffer must hold zeros, not
        # pad-unit embeddings, so batch padding behaves like zero padding
        alive_mask = (np.arange(s)[None, :] < lengths[:, None]).astype(float)
        emb = mul(emb, alive_mask[:, :, None])
        if self.kind == "rnn":
            states = []
            h = Tensor(np.zeros((n, self.width)))
            for j in range(s):
                x_j = reshape(narrow(emb, 1, j, 1), (n, -1))
                h_new = self.cell.step(x_j, h)
                alive = (lengths > j).astype(np.float64)[:, None]
                h = add(mul(h_new, alive), mul(h, 1.0 - alive))
                states.append(h)
            hidden = stack_time(states)  # (N, S, H)
            valid = np.arange(s)[None, :] < lengths[:, None]
        else:
            hidden = self._conv(emb, n, s)
            valid = self._valid_windows(lengths, s)
        pooled = self._pool(hidden, valid)
        return reshape(pooled, (b, t, self.width))

    def _conv(self, emb, n, s):
        pad = self.KERNEL // 2
        xp = pad_time(emb, pad, pad)
        acc = None
        for j in range(self.KERNEL):
            w_j = reshape(narrow(self.conv, 0, j, 1), (emb.data.shape[-1], self.width))
            term = narrow(xp, 1, j, s) @ w_j
            acc = term if acc is None else add(acc, term)
        return add(acc, self.conv_b)

    def _valid_windows(self, lengths, s):
        """Window positions fully inside the true sequence; all positions
        when the token is shorter than the kernel."""
        pos = np.arange(s)[None, :]
        lens = lengths[:, None]
        interior = (pos >= 1) & (pos <= lens - 2)
        short = (lens < self.KERNEL) & (pos < lens)
        return interior | short

    def _pool(self, hidden, valid):
        mask = valid.astype(np.float64)[:, :, None]
        if self.pooling == "mean":
            summed = sum_axis(mul(hidden, mask), 1)
            return mul(summed, 1.0 / mask.sum(axis=1))
        if self.pooling == "max":
            shifted = add(hidden, (mask - 1.0) * 1e30)
            return max_axis(shifted, 1)
        raise SpecError(f"unknown pooling {self.pooling!r}")


def combine(word_vec, sub_vec, mode, proj=None):
    """Merge a word embedding with the subencoder output."""
    if mode == "sum":
        if word_vec.data.shape[-1] != sub_vec.data.shape[-1]:
            raise ShapeError(
                f"sum combine width mismatch: {word_vec.data.shape[-1]} vs "
                f"{sub_vec.data.shape[-1]}"
            )
        return add(word_vec, sub_vec)
    if mode == "concat-project":
        return proj(concat([word_vec, sub_vec], axis=-1))
    raise SpecError(f"unknown combine mode {mode!r}")
